"""Command line entry point for the weight exporter."""
import argparse
import sys

from .export import ExportError, export


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="csfw-export",
        description="Convert a pretrained CNN into a CSFW weight file")
    parser.add_argument("command", choices=["export"])
    parser.add_argument("--model", required=True, help="source model name "
                        "(vgg16)")
    parser.add_argument("--out", required=True, help="output CSFW path")
    parser.add_argument("--source-weights", default=None,
                        help="local .pth checkpoint instead of downloading")
    parser.add_argument("--probe", default=None,
                        help="224x224 probe image for the activation fixture")
    parser.add_argument("--fixture", default=None,
                        help="where to write the probe fixture JSON")
    parser.add_argument("--source-id", default=None,
                        help="identifier recorded in the manifest")
    args = parser.parse_args(argv)

    try:
        result = export(args.model, args.out,
                        source_weights=args.source_weights,
                        probe_image=args.probe, fixture_path=args.fixture,
                        source_id=args.source_id)
    except ExportError as exc:
        print(f"error: export: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {result.csfw_path} "
          f"(sha256 {result.manifest['csfw_sha256'][:12]}...)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
