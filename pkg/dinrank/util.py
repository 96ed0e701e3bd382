from typing import List, get_origin
from zlib import crc32

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

DTYPES= {'float32': np.float32, 'float64': np.float64}


def resolve_dtype(precision):

    if isinstance(precision, str):
        if precision not in DTYPES:
            raise ValueError(f'Unknown precision {precision}, use one of {list(DTYPES)}')
        return np.dtype(DTYPES[precision])

    return np.dtype(precision)


def _path_key(part):
    if isinstance(part, (int, np.integer)):
        return int(part)
    # str hashes are salted per process, crc32 is not
    return crc32(str(part).encode())


def make_rng(seed, *path):
    '''Philox (counter-based) generator keyed by a root seed and a path of names or integers.

    Two calls with the same (seed, path) produce the same stream; distinct paths give
    independent streams, so every stochastic op can be handed its own seed path.
    seed may itself be a tuple (root, *path), which is how callers pass a seed path on.
    '''

    if isinstance(seed, tuple):
        seed, path= seed[0], tuple(seed[1:]) + path

    sequence= np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_path_key(p) for p in path))
    return np.random.Generator(np.random.Philox(sequence))


def num2str(x):
    if float(x).is_integer() and abs(x) < 1e15:
        return '%d' % x
    else:
        # shortest repr that parses back to the same double
        return repr(float(x))


class ConfigModel(BaseModel):
    '''Base for every typed configuration object: unknown keys are rejected and
    text values coming from INI files are coerced (comma lists, none).'''

    model_config= ConfigDict(extra='forbid')

    @model_validator(mode='before')
    @classmethod
    def _from_text(cls, values):

        if not isinstance(values, dict):
            return values

        parsed= {}
        for key, value in values.items():
            field= cls.model_fields.get(key)
            if isinstance(value, str) and field is not None:
                text= value.strip()
                if get_origin(field.annotation) in (list, List):
                    value= [item.strip() for item in text.split(',') if item.strip()]
                elif text.lower() == 'none':
                    value= None
            parsed[key]= value

        return parsed
