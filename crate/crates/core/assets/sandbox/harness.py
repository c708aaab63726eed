

def _sew_check():
    import math
    result = {entry_point}({input})
    expected = {expected}
    if isinstance(result, float) or isinstance(expected, float):
        ok = isinstance(result, (int, float)) and isinstance(expected, (int, float)) and math.isclose(result, expected, rel_tol=1e-9, abs_tol=1e-9)
    else:
        ok = result == expected
    print("\n{marker}:" + ("PASS" if ok else "FAIL"))


_sew_check()
