from argparse import ArgumentParser
import matplotlib.pyplot as plt
from dvae import const as k, util


def _main():
    """plot loss components from a losses.csv"""

    parser = ArgumentParser()
    parser.add_argument("path", type=str, help="losses.csv")
    parser.add_argument("-o", "--out", type=str, help="save instead of showing")
    args = parser.parse_args()
    rows = util.read_csv(args.path)
    steps = [int(row["step"]) for row in rows]

    for column in k.LOSS_COLUMNS[1:]:
        plt.plot(steps, [float(row[column]) for row in rows], label=column)

    plt.title("stage one losses")
    plt.legend(loc="best")
    plt.yscale("log")
    plt.xlabel("step")
    plt.ylabel("loss")

    if args.out:
        plt.savefig(args.out)
    else:
        plt.show()


if __name__ == "__main__":
    _main()
