#!/usr/bin/env python3
"""Write the built-in sample dataset (images.zip + qa.csv) to a directory."""

import argparse
from pathlib import Path

from vqadesk import sample_data


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", nargs="?", default="sample-dataset")
    parser.add_argument("--no-answers", action="store_true",
                        help="write an evaluation-style CSV without answer columns")
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "images.zip").write_bytes(sample_data.sample_zip_bytes())
    (out / "qa.csv").write_bytes(sample_data.sample_csv_bytes(
        with_answers=not args.no_answers))
    print(f"wrote {out / 'images.zip'} and {out / 'qa.csv'}")


if __name__ == "__main__":
    main()
