"""Command line entry point for the embedding service."""

import argparse

from .service import serve_embeddings


def main() -> None:
    parser = argparse.ArgumentParser(
        description="Serve /embed and /embed_tokens for a local model.")
    parser.add_argument("--model", required=True,
                        help="Local model directory, or a name under "
                             "$EMBEDLAB_MODEL_ROOT.")
    parser.add_argument("--port", type=int, default=8650)
    args = parser.parse_args()
    print(f"serving {args.model} on http://127.0.0.1:{args.port}", flush=True)
    serve_embeddings(args.model, args.port)


if __name__ == "__main__":
    main()
