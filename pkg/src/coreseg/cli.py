"""Command-line interface: coreseg train | predict | eval."""
import argparse
import sys

from .errors import CoresegError
from .pipeline import RunConfig, eval_command, predict_command, train_command


def _int_list(text):
    return [int(part) for part in text.split(",") if part.strip()]


def _float_list(text):
    return [float(part) for part in text.split(",") if part.strip()]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="coreseg",
        description="Pixel-wise labeling from pretrained-CNN hypercolumn "
                    "features and a DBN classifier.")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model from images + labels")
    train.add_argument("--images", required=True)
    train.add_argument("--labels", required=True)
    train.add_argument("--weights", required=True, help="CSFW weight file")
    train.add_argument("--palette", required=True)
    train.add_argument("--taps", default="default",
                       help="comma-separated layer names, or 'default'")
    train.add_argument("--samples-per-image", type=int, default=500)
    train.add_argument("--stride", type=int, default=112)
    train.add_argument("--seed", type=int, required=True)
    train.add_argument("--out", required=True, help="output CSDM model path")
    train.add_argument("--head", choices=["logistic", "linear"], default="logistic")
    train.add_argument("--contrast", type=_float_list, default=[0.8, 1.0, 1.2])
    train.add_argument("--hidden", type=_int_list, default=[1024, 512, 128])
    train.add_argument("--pretrain-epochs", type=int, default=10)
    train.add_argument("--pretrain-lr", type=float, default=0.01)
    train.add_argument("--gibbs-k", type=int, default=1)
    train.add_argument("--epochs", type=int, default=20)
    train.add_argument("--lr", type=float, default=0.1)
    train.add_argument("--batch", type=int, default=64)
    train.add_argument("--l1", type=float, default=1e-5)
    train.add_argument("--l2", type=float, default=1e-4)
    train.add_argument("--dropout", type=float, default=0.5)
    train.add_argument("--stratified", action="store_true")
    train.add_argument("--validation", default="",
                       help="validation image dir (metrics only unless --early-stop)")
    train.add_argument("--validation-labels", default="")
    train.add_argument("--early-stop", action="store_true")
    train.add_argument("--cache", default="", help="core cache directory")

    predict = sub.add_parser("predict", help="label every pixel of input images")
    predict.add_argument("--model", required=True)
    predict.add_argument("--weights", required=True)
    predict.add_argument("--images", required=True)
    predict.add_argument("--out", required=True, help="output directory")
    predict.add_argument("--palette", default="",
                         help="palette used to color classification output")
    predict.add_argument("--taps", default="default")
    predict.add_argument("--stride", type=int, default=112)

    ev = sub.add_parser("eval", help="score predictions against ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--palette", required=True)
    ev.add_argument("--report", default="", help="write the report here too")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            config = RunConfig(
                mode="train", images_dir=args.images, labels_dir=args.labels,
                weights_path=args.weights, palette_path=args.palette,
                output=args.out, taps_spec=args.taps,
                samples_per_image=args.samples_per_image, stride=args.stride,
                contrast_factors=args.contrast, seed=args.seed, head=args.head,
                hidden_sizes=args.hidden, pretrain_epochs=args.pretrain_epochs,
                pretrain_lr=args.pretrain_lr, gibbs_k=args.gibbs_k,
                epochs=args.epochs, lr=args.lr, batch=args.batch,
                l1=args.l1, l2=args.l2, dropout=args.dropout,
                stratified=args.stratified, validation_dir=args.validation,
                validation_labels_dir=args.validation_labels,
                early_stop=args.early_stop, cache_dir=args.cache)
            _, report = train_command(config)
            if report.losses:
                print(f"trained: final loss {report.losses[-1]:.6f} -> {args.out}")
        elif args.command == "predict":
            config = RunConfig(
                mode="predict", images_dir=args.images, model_path=args.model,
                weights_path=args.weights, output=args.out,
                palette_path=args.palette, taps_spec=args.taps,
                stride=args.stride)
            written = predict_command(config)
            print(f"wrote {len(written)} label images to {args.out}")
        else:
            config = RunConfig(
                mode="eval", images_dir=args.pred, labels_dir=args.truth,
                palette_path=args.palette, output=args.report)
            _, text = eval_command(config)
            print(text, end="")
    except CoresegError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
