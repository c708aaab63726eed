import ast
import sys

with open(sys.argv[1], encoding="utf-8") as f:
    ast.parse(f.read(), filename=sys.argv[1])
