#!/usr/bin/env python3
"""Cut a WordNet 3.0 database down to a few words and their hypernym closures.

Usage: wordnet_subset.py SRC_DIR DST_DIR word [word ...]

Keeps the license header, the index lines of the named words, and the data
lines of every synset those words reach through hypernym pointers. Wu-Palmer
scores between the named words are unchanged by the cut.
"""
import os
import sys

POS = {"noun": "n", "adj": "a"}


def read(path):
    with open(path, encoding="latin-1") as f:
        return f.read().splitlines()


def main():
    src, dst, words = sys.argv[1], sys.argv[2], set(sys.argv[3:])
    os.makedirs(dst, exist_ok=True)
    data, header = {}, {}
    for name, tag in POS.items():
        lines = read(os.path.join(src, "data." + name))
        header[name] = [l for l in lines if l.startswith("  ")]
        for l in lines:
            if not l.startswith(" "):
                data[(l.split()[0], tag)] = l
    wanted, index = [], {}
    for name, tag in POS.items():
        keep = []
        for l in read(os.path.join(src, "index." + name)):
            if l.startswith(" "):
                keep.append(l)
                continue
            f = l.split()
            if f[0] in words:
                keep.append(l)
                wanted += [(off, tag) for off in f[-int(f[2]):]]
        index[name] = keep
    seen = set()
    while wanted:
        key = wanted.pop()
        if key in seen:
            continue
        seen.add(key)
        f = data[key].split(" | ")[0].split()
        at = 4 + 2 * int(f[3], 16)
        for _ in range(int(f[at])):
            sym, off, pos = f[at + 1], f[at + 2], f[at + 3]
            if sym in ("@", "@i"):
                wanted.append((off, "a" if pos == "s" else pos))
            at += 4
    for name, tag in POS.items():
        body = sorted(data[k] for k in seen if k[1] == tag)
        with open(os.path.join(dst, "data." + name), "w", encoding="latin-1") as f:
            f.write("\n".join(header[name] + body) + "\n")
        with open(os.path.join(dst, "index." + name), "w", encoding="latin-1") as f:
            f.write("\n".join(index[name]) + "\n")


if __name__ == "__main__":
    main()
