#!/usr/bin/env python3
"""Generate a planted-expert demo corpus in the public dump layout.

Writes one directory per subsite (sitea, siteb, ...) plus
``corpus_truth.json`` mapping each namespaced topic to its planted
expert, so pipeline output can be checked against ground truth.
"""

import argparse

from qaexpert.synthetic import make_corpus


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out_dir")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--subsites", type=int, default=2)
    parser.add_argument("--topics", type=int, default=3,
                        help="topics per subsite")
    parser.add_argument("--questions", type=int, default=8,
                        help="questions per topic")
    parser.add_argument("--background", type=int, default=12,
                        help="non-expert answerers shared across subsites")
    args = parser.parse_args()

    truth = make_corpus(
        args.out_dir,
        seed=args.seed,
        n_subsites=args.subsites,
        topics_per_subsite=args.topics,
        questions_per_topic=args.questions,
        n_background=args.background,
    )
    for topic in sorted(truth):
        print(f"{topic}: planted expert {truth[topic]}")
    print(f"wrote {args.subsites} subsite dumps under {args.out_dir}")


if __name__ == "__main__":
    main()
