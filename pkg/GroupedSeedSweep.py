#!/usr/bin/env python3

# Fans one SpectralKoopman-control.py command out over a list of seeds, one subprocess and one
# output directory per seed, with a fixed number of worker threads pulling from a shared job queue.

import argparse
import os
import random
from subprocess import call
import sys
import threading
import time

from skclib._version import __skc_version__

SKC_PATH = os.path.dirname(os.path.realpath(__file__)) + "/SpectralKoopman-control.py"


def read_seeds(seed_args, seed_file):
    seeds = list(seed_args or [])
    if seed_file:
        with open(seed_file) as infile:
            for line in infile:
                if line.startswith("#") or not line.strip():
                    continue

                try:
                    seeds.append(int(line.split()[0]))
                except ValueError:
                    sys.stderr.write("Seed file formatting error on line below! Expected an integer.\n")
                    sys.stderr.write(line + "\n")
                    sys.exit(1)

    if len(set(seeds)) != len(seeds):
        sys.stderr.write("Duplicate seeds given! Seeds must be unique.\n")
        sys.exit(1)

    return seeds


def create_seed_cmds(command, seeds, base_argstring, parent_odir, py_path):
    cmd_dict = dict()
    for s in seeds:
        odir = "{}seed{}/".format(parent_odir, s)
        cmd_dict[s] = "{} {} {}{} --seed {} --output_directory {}".format(py_path, SKC_PATH, command, base_argstring,
                                                                           s, odir)

    return cmd_dict


def launch_jobs(jobq, parent_odir, failures, lock):
    while jobq:
        try:
            seed, cmd = jobq.pop()

        except IndexError:
            return

        odir = "{}seed{}/".format(parent_odir, seed)
        if not os.path.exists(odir):
            os.makedirs(odir)

        with open("{}seed{}_out.txt".format(odir, seed), 'w') as outfile:
            time.sleep(random.uniform(0, 0.25))
            print("\nLaunching job for seed " + str(seed) + "\n" + cmd)
            ecode = call(cmd, stdout=outfile, stderr=outfile, shell=True)
            if ecode != 0:
                sys.stderr.write("Job for seed " + str(seed) + " exited with code " + str(ecode) + "\n")
                with lock:
                    failures.append((seed, ecode))


def run_sweep(command, seeds, base_argstring, parent_odir, nthreads, py_path="python3"):
    """Returns the list of (seed, exit code) pairs that failed."""
    if not parent_odir.endswith('/'):
        parent_odir += '/'

    cmd_dict = create_seed_cmds(command, seeds, base_argstring, parent_odir, py_path)
    jobq = [(s, cmd_dict[s]) for s in reversed(seeds)]
    failures = []
    lock = threading.Lock()
    threadL = []
    print("\nQueueing " + str(len(jobq)) + " jobs")
    for i in range(min(nthreads, len(jobq))):
        threadL.append(threading.Thread(target=launch_jobs, args=(jobq, parent_odir, failures, lock)))
        threadL[i].start()

    for t in threadL:
        t.join()

    return failures


# MAIN #
if __name__ == '__main__':
    parser = argparse.ArgumentParser(
        description="Run one SpectralKoopman-control command for several seeds in parallel. Every argument after "
                    "the recognized ones is passed through to the driver unchanged.")
    parser.add_argument("--version", action='version',
                        version='GroupedSeedSweep version {version} \n'.format(version=__skc_version__))
    parser.add_argument("--command", metavar='STR', help="Driver subcommand to run for every seed", required=True,
                        choices=["fit", "train", "control", "robustness", "bench"])
    parser.add_argument("--seeds", metavar='INT', type=int, nargs='+', help="Seeds to run")
    parser.add_argument("--seed_file", metavar='FILE', help="File with one seed per line")
    parser.add_argument("--output_directory", metavar='PATH', help="Parent directory; one subdirectory per seed",
                        required=True)
    parser.add_argument("--nthreads", metavar='INT', type=int, help="Concurrent driver processes", required=True)
    parser.add_argument("--python3_path", metavar='PATH', help="If needed, specify a custom path to python3.",
                        default="python3")

    args, passthrough = parser.parse_known_args()
    seeds = read_seeds(args.seeds, args.seed_file)
    if not seeds:
        print("No seeds were provided. Exiting.")
        sys.exit(1)

    base_argstring = "".join(" " + a for a in passthrough)
    print("Setting base argstring as:")
    print(base_argstring + "\n")
    failed = run_sweep(args.command, seeds, base_argstring, args.output_directory, args.nthreads, args.python3_path)
    if failed:
        sys.stderr.write(str(len(failed)) + " of " + str(len(seeds)) + " jobs failed: "
                         + ", ".join(str(s) for s, _ in failed) + "\n")
        sys.exit(1)

    print("All seed jobs completed")
