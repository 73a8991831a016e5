#!/usr/bin/env python3
"""Regenerate the fixture channel archive and the nondet-demo collection.

Layout written:

    channel/revisions.json
    channel/<commit>/packages/<name>.pkg.json
    channel/<commit>/blobs/<sha256>
    nondet/packages/nondet-demo.pkg.json
    nondet/blobs/<sha256>

A commit id is the first 16 hex chars of SHA-256 over every file of the
revision tree, sorted by relative path, each contributing
`<len(path)>:<path><len(bytes)>:<bytes>`.
"""

import hashlib
import json
import os
import shutil
import sys

HERE = os.path.dirname(os.path.abspath(__file__))


def src(name, body):
    return name, body.encode()


SOURCES_R1 = dict([
    src("bootstrap-cc.c", "/* bootstrap compiler driver */\nint main(void) { return cc_main(); }\n"),
    src("libc.c", "/* minimal C library */\nvoid *memcpy(void *d, const void *s, unsigned long n);\nint puts(const char *s);\n"),
    src("hello.c", "#include <stdio.h>\nint main(void) { puts(\"Hello, world!\"); return 0; }\n"),
    src("zlib.c", "/* deflate */\nint deflate(void *strm, int flush);\nint inflate(void *strm, int flush);\n"),
    src("Eigen.h", "// header-only linear algebra\ntemplate <typename T, int R, int C> class Matrix;\n"),
    src("openblas.c", "/* blocked dgemm */\nvoid cblas_dgemm(int order, int ta, int tb, int m, int n, int k);\n"),
    src("fftw.c", "/* fast fourier transforms */\nvoid fftw_execute(const void *plan);\n"),
    src("python.c", "/* interpreter */\nint Py_Main(int argc, wchar_t **argv);\n"),
    src("numpy.c", "/* ndarray core */\nvoid *PyArray_MatrixProduct(void *a, void *b);\n"),
    src("scipy.c", "/* scientific routines */\nint scipy_linalg_solve(void *a, void *b);\n"),
    src("kernel-bench.cc", "// dense integer matrix multiplication benchmark\nint main(int argc, char **argv) { return bench_gemm(argc, argv); }\n"),
])

# r2 fixes a typo in hello's greeting; nothing else changes.
SOURCES_R2 = dict(SOURCES_R1)
SOURCES_R2["hello.c"] = b"#include <stdio.h>\nint main(void) { puts(\"Hello, World!\"); return 0; }\n"


def program(name, version, source, inputs, tunable, flags, libs, artifact, dest):
    objects = ["obj/%s.o" % source] + libs
    return {
        "name": name,
        "version": version,
        "source": source,
        "inputs": inputs,
        "tunable": tunable,
        "recipe": [
            {"step": "fetch-source"},
            {"step": "compile", "source": "src/" + source, "flags": flags},
            {"step": "link", "objects": objects, "artifact": artifact},
            {"step": "install", "mappings": [{"from": "build/" + artifact, "to": dest}]},
            {"step": "emit-meta"},
        ],
    }


LIBC = "input:libc-mini/lib/libc.a"

PACKAGES = [
    program("bootstrap-cc", "1.0", "bootstrap-cc.c", [], False, ["-O1"], [], "cc", "bin/cc"),
    program("libc-mini", "2.35", "libc.c", ["bootstrap-cc"], False, ["-O2", "-fPIC"], [], "libc.a", "lib/libc.a"),
    program("hello", "1.0", "hello.c", [], False, ["-O2"], [], "hello", "bin/hello"),
    program("zlib-mini", "1.2.13", "zlib.c", ["libc-mini"], False, ["-O2"], [LIBC], "libz.a", "lib/libz.a"),
    {
        "name": "eigen-mini",
        "version": "3.4.0",
        "source": "Eigen.h",
        "inputs": [],
        "tunable": False,
        "recipe": [
            {"step": "fetch-source"},
            {"step": "install", "mappings": [{"from": "src/Eigen.h", "to": "include/Eigen.h"}]},
            {"step": "emit-meta"},
        ],
    },
    program("openblas-mini", "0.3.21", "openblas.c", ["libc-mini"], True, ["-O3"], [LIBC], "libopenblas.a", "lib/libopenblas.a"),
    program("fftw-mini", "3.3.10", "fftw.c", ["libc-mini"], True, ["-O3"], [LIBC], "libfftw3.a", "lib/libfftw3.a"),
    program("python-mini", "3.10.7", "python.c", ["libc-mini", "zlib-mini"], False, ["-O2"],
            [LIBC, "input:zlib-mini/lib/libz.a"], "python3", "bin/python3"),
    program("numpy-mini", "1.23.2", "numpy.c", ["python-mini", "openblas-mini"], False, ["-O2"],
            ["input:openblas-mini/lib/libopenblas.a"], "multiarray.so", "lib/multiarray.so"),
    program("scipy-mini", "1.9.1", "scipy.c", ["numpy-mini", "fftw-mini"], False, ["-O2"],
            ["input:fftw-mini/lib/libfftw3.a"], "linalg.so", "lib/linalg.so"),
    {
        "name": "minikernel-bench",
        "version": "1.0",
        "source": "kernel-bench.cc",
        "inputs": ["eigen-mini", "libc-mini"],
        "tunable": True,
        "recipe": [
            {"step": "fetch-source"},
            {"step": "compile", "source": "src/kernel-bench.cc", "flags": ["-O3", "-DNDEBUG"]},
            {"step": "compile", "source": "input:eigen-mini/include/Eigen.h", "flags": ["-O3", "-DNDEBUG"]},
            {"step": "link", "objects": ["obj/kernel-bench.cc.o", "obj/Eigen.h.o", LIBC], "artifact": "kernel-bench"},
            {"step": "install", "mappings": [{"from": "build/kernel-bench", "to": "bin/kernel-bench"}]},
            {"step": "emit-meta"},
        ],
    },
]

NONDET_SOURCE = ("nondet.c", b"/* records its build directory */\nconst char *build_dir = BUILD_DIR;\n")

NONDET = {
    "name": "nondet-demo",
    "version": "0.1",
    "source": "nondet.c",
    "inputs": [],
    "tunable": False,
    "recipe": [
        {"step": "fetch-source"},
        {"step": "compile", "source": "src/nondet.c", "flags": ["-O2"]},
        {"step": "link", "objects": ["obj/nondet.c.o"], "artifact": "nondet"},
        {"step": "install", "mappings": [{"from": "build/nondet", "to": "bin/nondet"}]},
        {"step": "write-text", "path": "share/nondet/build-info", "text": "built in @sandbox@\n"},
        {"step": "emit-meta"},
    ],
}


def sha256_hex(data):
    return hashlib.sha256(data).hexdigest()


def dump_json(obj):
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def write_collection(root, packages, sources):
    os.makedirs(os.path.join(root, "packages"))
    os.makedirs(os.path.join(root, "blobs"))
    for pkg in packages:
        name = pkg["source"]
        data = sources[name]
        digest = sha256_hex(data)
        with open(os.path.join(root, "blobs", digest), "wb") as f:
            f.write(data)
        out = dict(pkg)
        out["source"] = {"name": name, "sha256": digest}
        with open(os.path.join(root, "packages", pkg["name"] + ".pkg.json"), "wb") as f:
            f.write(dump_json(out))


def tree_commit(root):
    files = []
    for dirpath, _, names in os.walk(root):
        for n in names:
            full = os.path.join(dirpath, n)
            rel = os.path.relpath(full, root).replace(os.sep, "/")
            files.append(rel)
    h = hashlib.sha256()
    for rel in sorted(files, key=lambda s: s.encode()):
        with open(os.path.join(root, rel), "rb") as f:
            data = f.read()
        p = rel.encode()
        h.update(b"%d:" % len(p) + p + b"%d:" % len(data) + data)
    return h.hexdigest()[:16]


def main():
    channel = os.path.join(HERE, "channel")
    shutil.rmtree(channel, ignore_errors=True)
    os.makedirs(channel)
    revisions = []
    for label, sources in (("r1", SOURCES_R1), ("r2", SOURCES_R2)):
        tmp = os.path.join(channel, "tmp-" + label)
        write_collection(tmp, PACKAGES, sources)
        commit = tree_commit(tmp)
        os.rename(tmp, os.path.join(channel, commit))
        revisions.append({"commit": commit, "name": label})
    with open(os.path.join(channel, "revisions.json"), "wb") as f:
        f.write(dump_json(revisions))

    nondet = os.path.join(HERE, "nondet")
    shutil.rmtree(nondet, ignore_errors=True)
    write_collection(nondet, [NONDET], dict([NONDET_SOURCE]))

    for r in revisions:
        print(r["name"], r["commit"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
