import argparse

from .app import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="paraphrase-service")
    parser.add_argument("--port", type=int, default=8008)
    parser.add_argument("--model-id", default="builtin", help="'builtin' or a local seq2seq checkpoint path")
    parser.add_argument("--max-len", type=int, default=64)
    args = parser.parse_args(argv)
    serve(args.port, args.model_id, args.max_len)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
