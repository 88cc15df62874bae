"""Run directories: configuration tree, hashing, logging, timing log, finish flag and metadata."""

import copy
from datetime import datetime
import hashlib
import json
import logging
import os
import socket
import sys
import time
import zlib

import numpy as np
import pandas as pd

from skclib._version import __skc_version__
from skclib.errors import ConfigError

DEFAULT_CONFIG_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "default_run_config.json")
LOG_FORMAT = '[%(name)s:%(levelname)s]\t%(message)s'
STREAMS = ("env", "agent", "augment", "data", "init", "bench", "eval")


def load_defaults():
    with open(DEFAULT_CONFIG_FILE) as fp:
        return json.load(fp)


def merge_tree(base, update, path=""):
    """Recursive merge; keys of update must already exist in base."""
    out = copy.deepcopy(base)
    for k, v in update.items():
        field_path = path + k
        if k not in out:
            raise ConfigError(field_path, "unknown configuration field")

        if isinstance(out[k], dict) and isinstance(v, dict) and k != "overrides":
            out[k] = merge_tree(out[k], v, field_path + ".")
        else:
            out[k] = copy.deepcopy(v)

    return out


def set_path(tree, dotted, value):
    node = tree
    keys = dotted.split(".")
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise ConfigError(dotted, "unknown configuration field")

        node = node[k]

    if keys[-1] not in node:
        raise ConfigError(dotted, "unknown configuration field")

    node[keys[-1]] = value


def get_path(tree, dotted):
    node = tree
    for k in dotted.split("."):
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(dotted, "unknown configuration field")

        node = node[k]

    return node


def build_config(config_file=None, flag_values=None):
    """defaults <- config file <- flags (dotted paths); flags set to None are ignored."""
    tree = load_defaults()
    if config_file:
        if not os.path.exists(config_file):
            raise ConfigError("config", "file not found: " + config_file)

        with open(config_file) as fp:
            try:
                tree = merge_tree(tree, json.load(fp))
            except json.JSONDecodeError as e:
                raise ConfigError("config", "not valid JSON (" + str(e) + ")")

    for dotted, v in (flag_values or {}).items():
        if v is not None:
            set_path(tree, dotted, v)

    return tree


def canonical_json(tree):
    return json.dumps(tree, sort_keys=True, separators=(",", ":"))


def config_hash(tree):
    """sha256 of the canonical form, so key order never changes the hash."""
    return hashlib.sha256(canonical_json(tree).encode()).hexdigest()


def require(tree, dotted, kind=None, positive=False):
    v = get_path(tree, dotted)
    if v is None:
        raise ConfigError(dotted, "is required")

    if kind is not None and not isinstance(v, kind):
        raise ConfigError(dotted, "has the wrong type (" + type(v).__name__ + ")")

    if positive and not v > 0:
        raise ConfigError(dotted, "must be positive")

    return v


def run_dir_name(command, tree):
    return command + "_" + config_hash(tree)[:10] + "_seed" + str(tree["seed"])


def make_streams(seed, names=STREAMS):
    """Independent generators per named sub-stream, each fixed by (seed, name)."""
    return {n: np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(n.encode())])) for n in names}


def command_string(argv):
    s = ""
    for arg in argv:
        if ' ' in arg:
            s += '"{}" '.format(arg)
        else:
            s += "{} ".format(arg)

    return s


class RunContext(object):
    """Owns one run directory for the lifetime of a command."""

    def __init__(self, command, tree, argv=None):
        self.command = command
        self.tree = tree
        self.hash = config_hash(tree)
        self.outdir = os.path.join(tree["output_directory"], run_dir_name(command, tree))
        self.argv = list(sys.argv if argv is None else argv)
        self.launchtime = str(datetime.now())
        self.ti = time.time()
        self.ta = self.ti
        self._handlers = []
        self.timing_logfile = None

    def path(self, name):
        return os.path.join(self.outdir, name)

    def __enter__(self):
        fresh = not os.path.exists(self.outdir)
        os.makedirs(self.outdir, exist_ok=True)
        with open(self.path("run_config.json"), 'w') as fp:
            json.dump({"config": self.tree, "hash": self.hash}, fp, indent=2, sort_keys=True)

        self._setup_logging()
        logging.info("Launched on " + self.launchtime)
        logging.info("spectral-koopman-control version " + __skc_version__ + "\n")
        logging.info("spectral-koopman-control command:")
        logging.info(command_string(self.argv) + "\n")
        if not fresh and os.path.exists(self.path("finish_flag.txt")):
            logging.warning("WARNING: writing into the run directory of a previous run; outputs will be overwritten")

        with open(self.path("finish_flag.txt"), 'w') as ffof:
            ffof.write("UNSUCCESSFUL\n")

        self.timing_logfile = open(self.path("timing_log.txt"), 'w')
        self.timing_logfile.write("#stage:\twalltime(seconds)\n")
        self.save_metadata()
        return self

    def _setup_logging(self):
        root = logging.getLogger()
        file_handler = logging.FileHandler(self.path(self.command + ".log"), mode='w')
        console_handler = logging.StreamHandler()
        formatter = logging.Formatter(LOG_FORMAT)
        for h in (file_handler, console_handler):
            h.setLevel(logging.INFO)
            h.setFormatter(formatter)
            root.addHandler(h)
            self._handlers.append(h)

        root.setLevel(logging.INFO)

    def stage(self, name):
        tb = time.time()
        self.timing_logfile.write(name + ":\t" + "{:.2f}".format(tb - self.ta) + "\n")
        self.ta = tb

    def save_metadata(self):
        metadata_dict = {"launch_datetime": self.launchtime, "hostname": socket.gethostname(),
                         "skc_command": command_string(self.argv), "skc_version": __skc_version__,
                         "config_hash": self.hash, "seed": self.tree["seed"]}
        with open(self.path("run_metadata.json"), 'w') as fp:
            json.dump(metadata_dict, fp, indent=2)

    def succeed(self):
        with open(self.path("finish_flag.txt"), 'w') as ffof:
            ffof.write("SUCCESS\n")

    def __exit__(self, exc_type, exc, tb):
        if self.timing_logfile is not None:
            self.timing_logfile.write("Total_elapsed_walltime\t" + "{:.2f}".format(time.time() - self.ti) + "\n")
            self.timing_logfile.close()

        if exc_type is None:
            self.succeed()

        root = logging.getLogger()
        for h in self._handlers:
            h.close()
            root.removeHandler(h)

        return False


def write_csv(rows, path, columns=None):
    """CSV through pandas with a fixed float format so reruns are byte-identical."""
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows, columns=columns)
    df.to_csv(path, index=False, float_format="%.10g")
    return df
