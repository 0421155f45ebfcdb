"""Split a video into still frames with an external decoder (ffmpeg or compatible)."""
from __future__ import annotations

import logging
import re
import shlex
import shutil
import subprocess
from pathlib import Path

from ..errors import DecoderFailed, DecoderNotFound, ZeroFrames

log = logging.getLogger(__name__)

DEFAULT_DECODER_CMD = "ffmpeg -hide_banner -loglevel error -i {input} {output_pattern}"
FRAME_PATTERN = "frame_%06d"


def _frame_files(out_dir: Path, ext: str) -> set[str]:
    rx = re.compile(rf"frame_\d{{6}}\.{re.escape(ext)}")
    return {p.name for p in out_dir.iterdir() if rx.fullmatch(p.name)}


def extract_frames(video_path, out_dir, decoder_command_template: str = DEFAULT_DECODER_CMD,
                   ext: str = "ppm") -> int:
    """Run the decoder and return how many new ``frame_NNNNNN.<ext>`` files it wrote.

    The template is split shell-style; ``{input}`` and ``{output_pattern}``
    are substituted inside each argument, so paths with spaces are safe.
    """
    if "{input}" not in decoder_command_template or "{output_pattern}" not in decoder_command_template:
        raise ValueError("decoder template needs {input} and {output_pattern} placeholders")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pattern = str(out_dir / f"{FRAME_PATTERN}.{ext}")
    argv = [
        tok.replace("{input}", str(video_path)).replace("{output_pattern}", pattern)
        for tok in shlex.split(decoder_command_template)
    ]
    if not argv or shutil.which(argv[0]) is None:
        raise DecoderNotFound(argv)
    before = _frame_files(out_dir, ext)
    log.info("running %s", shlex.join(argv))
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise DecoderFailed(argv, proc.returncode, proc.stderr)
    produced = len(_frame_files(out_dir, ext) - before)
    if produced == 0:
        raise ZeroFrames(f"decoder produced no frames from {video_path}")
    return produced
