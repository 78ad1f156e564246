# commands/__init__.py
from . import evaluate, gen, infer, pretrain, sweep, train

COMMANDS = {
    "gen": gen,
    "pretrain": pretrain,
    "train": train,
    "infer": infer,
    "eval": evaluate,
    "sweep-delay": sweep,
}


def register(subparsers, parents) -> None:
    for name, mod in COMMANDS.items():
        p = subparsers.add_parser(name, help=mod.HELP, parents=parents)
        mod.add_arguments(p)
        p.set_defaults(handler=mod.run)
