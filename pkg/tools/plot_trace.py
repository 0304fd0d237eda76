# -*- coding: utf-8 -*-

"""
Terminal plot of a reconstruction trace CSV: log10 loss on top, learning rate below.

usage: PYTHONPATH=. python tools/plot_trace.py trace.csv
"""

from sys import argv

import numpy as np
import plotext as plt

from gpair.fileio import read_trace_csv


def draw(file_name="trace.csv"):
    columns = read_trace_csv(file_name)
    iters = columns["iter"]
    loss = np.log10(np.maximum(np.asarray(columns["loss"]), 1e-300))

    plt.subplots(2, 1)
    plt.subplot(1, 1)
    plt.plot(iters, loss.tolist(), color="red")
    plt.frame(True)
    plt.grid(True)
    plt.xlabel("iter")
    plt.ylabel("log10 loss")
    plt.title("Reconstruction Loss")

    plt.subplot(2, 1)
    plt.plot(iters, columns["lr"], color="magenta")
    plt.frame(True)
    plt.grid(True)
    plt.xlabel("iter")
    plt.ylabel("lr")
    plt.title("Learning Rate")
    plt.show()
    print(f"final loss: {columns['loss'][-1]!r}, min loss: {min(columns['loss'])!r}")


if __name__ == "__main__":
    trace_path = argv[1]
    draw(trace_path)
