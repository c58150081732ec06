"""HTTP/1.1 range server over a local directory with injected latency.

Lets the remote-source path be exercised end to end without cloud
credentials: honors ``Range: bytes=a-b`` with 206 responses, disables
caching, and shapes traffic per a :class:`~cogstream.sources.SourceProfile`
shared across connections.
"""

import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional, Tuple

from .errors import BindFailure
from .sources import Shaper, SourceProfile


class _RangeHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def do_GET(self):
        server: "_Server" = self.server  # type: ignore[assignment]
        path = self._resolve()
        if path is None:
            self.send_error(404, "not found")
            return
        data_size = path.stat().st_size
        rng_header = self.headers.get("Range")

        shaper = server.shaper
        shaper.acquire()
        try:
            shaper.delay()
            if rng_header is None:
                start, end = 0, data_size - 1
                status = 200
            else:
                parsed = self._parse_range(rng_header, data_size)
                if parsed == "ignore":
                    start, end, status = 0, data_size - 1, 200
                elif parsed is None:
                    self.send_response(416)
                    self.send_header("Content-Range", f"bytes */{data_size}")
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                else:
                    start, end = parsed
                    status = 206
            length = end - start + 1
            with open(path, "rb") as f:
                f.seek(start)
                body = f.read(length)
            self.send_response(status)
            if status == 206:
                self.send_header(
                    "Content-Range", f"bytes {start}-{end}/{data_size}"
                )
            self.send_header("Accept-Ranges", "bytes")
            self.send_header("Cache-Control", "no-store")
            self.send_header("Content-Length", str(length))
            self.end_headers()
            self.wfile.write(body)
            shaper.throttle(length)
        finally:
            shaper.release()

    def do_HEAD(self):
        path = self._resolve()
        if path is None:
            self.send_error(404, "not found")
            return
        self.send_response(200)
        self.send_header("Accept-Ranges", "bytes")
        self.send_header("Cache-Control", "no-store")
        self.send_header("Content-Length", str(path.stat().st_size))
        self.end_headers()

    def _resolve(self) -> Optional[Path]:
        server: "_Server" = self.server  # type: ignore[assignment]
        rel = self.path.lstrip("/").split("?", 1)[0]
        candidate = (server.root / rel).resolve()
        try:
            candidate.relative_to(server.root)
        except ValueError:
            return None
        return candidate if candidate.is_file() else None

    @staticmethod
    def _parse_range(header: str, size: int):
        """Returns (start, end), None for unsatisfiable, or "ignore"."""
        if not header.startswith("bytes=") or "," in header:
            return "ignore"
        spec = header[len("bytes="):]
        first, _, last = spec.partition("-")
        try:
            if first == "":
                n = int(last)  # suffix form: last n bytes
                if n <= 0:
                    return None
                return max(0, size - n), size - 1
            start = int(first)
            end = int(last) if last else size - 1
        except ValueError:
            return "ignore"
        if start >= size or start < 0 or end < start:
            return None
        return start, min(end, size - 1)

    def log_message(self, fmt, *args):
        pass  # keep benchmark runs quiet


class _Server(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, root: Path, profile: SourceProfile):
        self.root = root.resolve()
        self.profile = profile
        self.shaper = Shaper(profile)
        super().__init__(address, _RangeHandler)


class RangeServer:
    """A running range server; use as a context manager or call stop()."""

    def __init__(self, root_dir, profile: SourceProfile,
                 bind_address: Tuple[str, int] = ("127.0.0.1", 0)):
        root = Path(root_dir)
        if not root.is_dir():
            raise BindFailure(f"root directory {root} does not exist")
        try:
            self._httpd = _Server(bind_address, root, profile)
        except OSError as exc:
            raise BindFailure(f"cannot bind {bind_address}: {exc}") from exc
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, name="range-server", daemon=True
        )
        self._thread.start()

    @property
    def address(self) -> Tuple[str, int]:
        host, port = self._httpd.server_address[:2]
        return str(host), int(port)

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def serve(root_dir, profile: SourceProfile,
          bind_address: Tuple[str, int] = ("127.0.0.1", 0)) -> RangeServer:
    """Start a range server for root_dir; returns the running server."""
    return RangeServer(root_dir, profile, bind_address)
