# Runs a candidate program under an audit hook that refuses writes outside the
# working directory, sockets, subprocesses and native code loading.
import os
import runpy
import sys

_ROOT = os.path.realpath(os.getcwd())
_WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC

_DENIED = {
    "socket.connect", "socket.bind", "socket.sendto", "socket.sendmsg",
    "socket.getaddrinfo", "socket.gethostbyname", "subprocess.Popen",
    "os.system", "os.exec", "os.posix_spawn", "os.spawn", "os.fork",
    "os.forkpty", "os.kill", "os.killpg", "pty.spawn", "ctypes.dlopen",
    "ctypes.dlsym", "ctypes.cdata", "sys.addaudithook",
}
_PATH_EVENTS = {
    "os.remove", "os.rmdir", "os.mkdir", "os.chmod", "os.chown", "os.symlink",
    "os.link", "os.truncate", "os.utime", "shutil.rmtree", "os.chdir",
    "os.chroot",
}


def _inside(path):
    if isinstance(path, int):
        return True
    try:
        path = os.fsdecode(path)
    except TypeError:
        return False
    full = os.path.realpath(os.path.join(_ROOT, path))
    return full == _ROOT or full.startswith(_ROOT + os.sep)


def _hook(event, args):
    if event in _DENIED:
        raise PermissionError("sandbox: " + event + " denied")
    if event == "open":
        path, mode, flags = args
        writing = (mode is not None and any(c in mode for c in "wax+")) or bool(flags & _WRITE_FLAGS)
        if writing and not _inside(path):
            raise PermissionError("sandbox: write outside working directory denied")
    elif event == "os.rename":
        if not (_inside(args[0]) and _inside(args[1])):
            raise PermissionError("sandbox: rename outside working directory denied")
    elif event in _PATH_EVENTS:
        if not _inside(args[0]):
            raise PermissionError("sandbox: " + event + " outside working directory denied")


sys.addaudithook(_hook)
_target = sys.argv[1]
sys.argv = sys.argv[1:]
runpy.run_path(_target, run_name="__main__")
