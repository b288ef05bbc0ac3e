import os

import pandas as pd


here = os.path.dirname(__file__)


class Schema:
    r"""
    Columns of a tabular output. The first schema field is the index, every field has a type
    and a description.
    """

    def __init__(self, index, columns):
        self.index = index
        self.columns = columns

    @classmethod
    def load_from_csv(cls, path):
        df = pd.read_csv(path, delimiter=";")

        df.columns.name = "field"

        df.index = ["type", "description"]

        index = df.iloc[:, 0]

        columns = df.iloc[:, 1:]

        return cls(index, columns)

    @property
    def index_name(self):
        return self.index.name

    @property
    def header(self):
        return list(self.columns.columns)

    @property
    def dtypes(self):
        types = {"str": str, "int": int, "float": float}
        fields = [(self.index.name, self.index["type"])] + list(self.columns.loc["type"].items())
        return {name: types[type_name] for name, type_name in fields}


SCHEMA_SCORES = Schema.load_from_csv(os.path.join(here, "scores.csv"))

SCHEMA_TRACE = Schema.load_from_csv(os.path.join(here, "trace.csv"))

SCHEMA_DECODE = Schema.load_from_csv(os.path.join(here, "decode_summary.csv"))

SCHEMA_EVAL = Schema.load_from_csv(os.path.join(here, "evaluation.csv"))

SCHEMA_RESULTS = Schema.load_from_csv(os.path.join(here, "results.csv"))

SCHEMA_TABLES = Schema.load_from_csv(os.path.join(here, "match_tables.csv"))
