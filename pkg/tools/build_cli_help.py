"""Regenerate the pinned CLI help transcript at tests/data/cli_help.txt.

Run from the repository root after any CLI surface change:
python3 tools/build_cli_help.py
"""

from pathlib import Path

import common  # noqa: F401  (sys.path bootstrap)

from click.testing import CliRunner

from metasieve.cli import cli

ROOT = Path(__file__).resolve().parent.parent


def render_help_transcript() -> str:
    runner = CliRunner()
    sections = []
    names = [""] + sorted(cli.commands)
    for name in names:
        args = ([name] if name else []) + ["--help"]
        result = runner.invoke(cli, args, prog_name="metasieve", env={"COLUMNS": "80"})
        assert result.exit_code == 0, (name, result.output)
        title = name or "(top level)"
        sections.append(f"$ metasieve {name + ' ' if name else ''}--help\n{result.output}")
    return "\n".join(sections)


def main() -> None:
    out = ROOT / "tests" / "data" / "cli_help.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_help_transcript(), encoding="utf-8")
    print(f"wrote {out.relative_to(ROOT)}")


if __name__ == "__main__":
    main()
