"""Jailed execution of a candidate script.

Usage: python3 -I runner.py WORKDIR SCRIPT MEM_BYTES CPU_SECONDS

The candidate runs with WORKDIR as its working directory. Audit hooks deny
network access, process creation, chdir escapes, and file access outside
WORKDIR (interpreter/site-packages paths stay readable so imports work).
Exit codes: 0 ok, 3 candidate syntax error, 4 candidate runtime error.
"""

import os
import sys
import traceback


def main():
    workdir, script, mem_bytes, cpu_seconds = (
        sys.argv[1],
        sys.argv[2],
        int(sys.argv[3]),
        int(sys.argv[4]),
    )
    with open(script, "r") as fh:
        source = fh.read()

    os.chdir(workdir)
    jail = os.path.realpath(os.getcwd())

    try:
        import resource

        if mem_bytes > 0:
            resource.setrlimit(resource.RLIMIT_AS, (mem_bytes, mem_bytes))
        if cpu_seconds > 0:
            resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds))
    except (ImportError, ValueError, OSError):
        pass

    read_roots = set()
    for p in (sys.prefix, sys.base_prefix, getattr(sys, "exec_prefix", "")):
        if p:
            read_roots.add(os.path.realpath(p))
    for p in sys.path:
        if p and os.path.isabs(p):
            read_roots.add(os.path.realpath(p))
    # Traceback rendering reads these through linecache.
    read_roots.add(os.path.realpath(os.path.dirname(os.path.abspath(sys.argv[0]))))
    read_roots.add(os.path.realpath(os.path.dirname(os.path.abspath(script))))

    def inside(path, root):
        return path == root or path.startswith(root + os.sep)

    def resolve(raw):
        try:
            if isinstance(raw, bytes):
                raw = os.fsdecode(raw)
            if isinstance(raw, int) or not isinstance(raw, str):
                return None
            return os.path.realpath(os.path.join(os.getcwd(), raw))
        except Exception:
            return None

    denied_mutations = (
        "os.remove",
        "os.rename",
        "os.rmdir",
        "os.truncate",
        "os.link",
        "os.symlink",
        "shutil.rmtree",
        "shutil.move",
    )

    def hook(event, args):
        if event.startswith("socket."):
            raise RuntimeError("sandbox: network access denied")
        if event in ("subprocess.Popen", "os.system", "os.exec", "os.posix_spawn", "os.spawn", "os.fork", "pty.spawn"):
            raise RuntimeError("sandbox: process creation denied")
        if event == "os.chdir":
            target = resolve(args[0])
            if target is None or not inside(target, jail):
                raise RuntimeError("sandbox: chdir outside working directory denied")
            return
        if event == "open":
            raw, mode, flags = args[0], args[1], args[2]
            path = resolve(raw)
            if path is None:
                return
            if mode is None:
                writing = bool(
                    flags
                    & (os.O_WRONLY | os.O_RDWR | os.O_APPEND | os.O_CREAT | os.O_TRUNC)
                )
            else:
                writing = any(ch in mode for ch in "wax+")
            if inside(path, jail):
                return
            if not writing:
                for root in read_roots:
                    if inside(path, root):
                        return
            raise RuntimeError("sandbox: file access denied: %r" % (raw,))
        if event in denied_mutations or event == "os.mkdir":
            path = resolve(args[0])
            if path is not None and not inside(path, jail):
                raise RuntimeError("sandbox: file mutation denied: %s" % event)

    sys.addaudithook(hook)

    try:
        code = compile(source, "candidate.py", "exec")
    except SyntaxError:
        traceback.print_exc()
        sys.exit(3)

    namespace = {"__name__": "__main__", "__file__": "candidate.py"}
    try:
        exec(code, namespace)
    except SystemExit:
        raise
    except BaseException:
        traceback.print_exc()
        sys.exit(4)


main()
