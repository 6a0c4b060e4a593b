"""Assemble the small benchmark datasets under data/ from package-registry
artifacts (the sandbox this project was built in has no route to the UCI
archive). Every output is either the original file or an exact regeneration.

  mushrooms   raw UCI agaricus-lepiota.data, vendored in the xgboost-sys crate
  tictactoe   UCI tic-tac-toe endgame set, regenerated by game-tree enumeration
  yeast       UCI yeast, rebuilt from KEEL splits (see rebuild_yeast.py)
  mnist5k     5000 MNIST training digits shipped with mlxtend, written as IDX

usage: python3 scripts/prepare_data.py [workdir]
"""
import gzip
import io
import json
import os
import struct
import subprocess
import sys
import tarfile
import zipfile

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(os.path.dirname(HERE), "data")
WORK = sys.argv[1] if len(sys.argv) > 1 else "/tmp/wasspac-data"
os.makedirs(DATA, exist_ok=True)
os.makedirs(WORK, exist_ok=True)


def fetch(url, dest):
    if not os.path.exists(dest):
        subprocess.run(["curl", "-sSfL", "--retry", "5", "-o", dest, url], check=True)
    return dest


def pypi_file(name, suffix):
    for _ in range(5):
        raw = subprocess.run(["curl", "-s", f"https://pypi.org/pypi/{name}/json"],
                             capture_output=True).stdout
        try:
            meta = json.loads(raw)
            break
        except ValueError:
            continue
    url = next(u["url"] for u in meta["urls"] if u["filename"].endswith(suffix))
    return fetch(url, os.path.join(WORK, os.path.basename(url)))


def mushrooms():
    crate = fetch("https://static.crates.io/crates/xgboost-sys/xgboost-sys-0.1.2.crate",
                  os.path.join(WORK, "xgboost-sys-0.1.2.crate"))
    member = "xgboost-sys-0.1.2/xgboost/demo/binary_classification/agaricus-lepiota.data"
    with tarfile.open(crate) as tar:
        raw = tar.extractfile(member).read()
    with open(os.path.join(DATA, "mushrooms.csv"), "wb") as f:
        f.write(raw)


def tictactoe():
    lines = [0, 1, 2], [3, 4, 5], [6, 7, 8], [0, 3, 6], [1, 4, 7], [2, 5, 8], [0, 4, 8], [2, 4, 6]

    def winner(b):
        for a, c, d in lines:
            if b[a] != "b" and b[a] == b[c] == b[d]:
                return b[a]
        return None

    seen, order = set(), []

    def play(board, turn):
        w = winner(board)
        if w is not None or "b" not in board:
            key = tuple(board)
            if key not in seen:
                seen.add(key)
                order.append((key, "positive" if w == "x" else "negative"))
            return
        for i in range(9):
            if board[i] == "b":
                board[i] = turn
                play(board, "o" if turn == "x" else "x")
                board[i] = "b"

    play(["b"] * 9, "x")
    order.sort(key=lambda r: (r[1] != "positive", r[0]))
    assert len(order) == 958 and sum(r[1] == "positive" for r in order) == 626
    with open(os.path.join(DATA, "tictactoe.csv"), "w") as f:
        for board, label in order:
            f.write(",".join(board) + "," + label + "\n")


def yeast():
    wheel = pypi_file("imbalanced_databases", "none-any.whl")
    root = os.path.join(WORK, "keel")
    with zipfile.ZipFile(wheel) as z:
        for n in z.namelist():
            if "/yeast" in n:
                z.extract(n, root)
    subprocess.run([sys.executable, os.path.join(HERE, "rebuild_yeast.py"),
                    os.path.join(root, "imbalanced_databases", "data"),
                    os.path.join(DATA, "yeast.csv")], check=True)


def mnist5k():
    wheel = pypi_file("mlxtend", "none-any.whl")
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    rows = [list(map(int, l.split(","))) for l in raw.strip().splitlines()]
    n = len(rows)
    with open(os.path.join(DATA, "mnist5k-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for r in rows:
            f.write(bytes(r[:784]))
    with open(os.path.join(DATA, "mnist5k-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(r[784] for r in rows))


if __name__ == "__main__":
    mushrooms()
    tictactoe()
    yeast()
    mnist5k()
    for name in sorted(os.listdir(DATA)):
        print(name, os.path.getsize(os.path.join(DATA, name)))
