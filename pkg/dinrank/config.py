'''Run configuration: INI files with dotted sections plus command-line overrides.

    [train]
    learning_rate = 0.005
    [scorer]
    family = attn_din
    [scorer.dense]
    widths = 1024,512,256

Keys of [train] are top-level; every other section nests by its dotted name.
'''

import os
from configparser import ConfigParser, Error as ParserError
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator

from dinrank.data import fold_paths, parse_ranking_file
from dinrank.errors import ConfigError
from dinrank.training import TrainConfig, make_synthetic_max_task
from dinrank.util import ConfigModel

TOP_SECTION= 'train'


class DataConfig(ConfigModel):
    kind: Literal['files', 'synthetic']= 'files'
    fold: Optional[str]= None
    train: Optional[str]= None
    vali: Optional[str]= None
    test: Optional[str]= None
    context_features: int= Field(0, ge=0)
    train_queries: int= Field(5000, ge=1)
    vali_queries: int= Field(500, ge=0)
    test_queries: int= Field(1000, ge=0)
    list_size: int= Field(10, ge=2)

    def paths(self):
        '''split -> file path; an MSLR fold directory fills in splits not given explicitly.'''

        paths= {}
        if self.fold is not None:
            if not os.path.isdir(self.fold):
                raise ConfigError(f'fold directory {self.fold} does not exist')
            paths.update(fold_paths(self.fold))
        for split in ('train', 'vali', 'test'):
            if getattr(self, split) is not None:
                paths[split]= getattr(self, split)

        for split, path in paths.items():
            if not os.path.isfile(path):
                raise ConfigError(f'{split} data {path} does not exist')
        return paths

    def load(self, n_features, seed=0, splits=('train', 'vali', 'test'), verbose=False):
        '''Queries of the requested splits; a split without data is left out.'''

        if self.kind == 'synthetic':
            sizes= dict(train=self.train_queries, vali=self.vali_queries, test=self.test_queries)
            return {split: make_synthetic_max_task(sizes[split], self.list_size, n_features, seed=(seed, 'data', split))
                    for split in splits if sizes[split]}

        paths= self.paths()
        return {split: parse_ranking_file(paths[split], n_features, self.context_features, verbose)
                for split in splits if split in paths}


class BenchmarkConfig(ConfigModel):
    families: List[str]= Field(default_factory=lambda: ['univariate', 'gsf', 'attn_din'])
    list_sizes: List[int]= Field(default_factory=lambda: [10, 50, 100, 200])
    repetitions: int= Field(50, ge=1)
    warmup: int= Field(20, ge=20)
    group_sizes: List[int]= Field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64, 128])

    @field_validator('list_sizes', 'group_sizes')
    @classmethod
    def _positive(cls, sizes):
        if any(s < 1 for s in sizes):
            raise ValueError(f'sizes must be >= 1, got {sizes}')
        return sizes


class RunConfig(TrainConfig):
    data: DataConfig= Field(default_factory=DataConfig)
    benchmark: BenchmarkConfig= Field(default_factory=BenchmarkConfig)

    def train_config(self):
        return TrainConfig.model_validate(self.model_dump(exclude={'data', 'benchmark'}))


def _nest(tree, path, value, origin):

    node= tree
    for key in path[:-1]:
        node= node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f'{origin}: {key} is a value, not a section')
    if isinstance(node.get(path[-1]), dict):
        raise ConfigError(f'{origin}: {".".join(path)} is a section, not a value')
    node[path[-1]]= value


def _split_key(key):
    path= key.strip().split('.')
    if len(path) > 1 and path[0] == TOP_SECTION:
        path= path[1:]
    if not path or not all(path):
        raise ConfigError(f'malformed key {key!r}')
    return path


def read_config_file(path):
    '''INI file -> nested dict of raw text values.'''

    if not os.path.isfile(path):
        raise ConfigError(f'config file {path} does not exist')

    parser= ConfigParser(interpolation=None)
    parser.optionxform= str
    try:
        parser.read(path)
    except ParserError as e:
        raise ConfigError(f'{path}: {e}') from None

    tree= {}
    for section in parser.sections():
        prefix= [] if section == TOP_SECTION else _split_key(section)
        for key, value in parser.items(section):
            _nest(tree, prefix + _split_key(key), value, path)

    return tree


def load_run_config(path=None, overrides=(), seed=None):
    '''Config file (optional) <- key=value overrides <- seed.'''

    tree= read_config_file(path) if path else {}

    for item in overrides:
        key, sep, value= item.partition('=')
        if not sep:
            raise ConfigError(f'override {item!r} is not of the form key=value')
        _nest(tree, _split_key(key), value.strip(), 'override')

    if seed is not None:
        tree['seed']= seed

    return RunConfig.model_validate(tree)


def _text(value):
    if value is None:
        return 'none'
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (list, tuple)):
        return (',').join(str(v) for v in value)
    return str(value)


def _sections(values, name, out):
    out[name]= {}
    for key, value in values.items():
        if isinstance(value, dict):
            _sections(value, f'{name}.{key}' if name != TOP_SECTION else key, out)
        else:
            out[name][key]= _text(value)


def write_run_config(path, config):
    '''Echo the effective configuration; read back by load_run_config it gives an equal RunConfig.'''

    values= config.model_dump(mode='json') if isinstance(config, BaseModel) else config
    sections= {}
    _sections(values, TOP_SECTION, sections)

    parser= ConfigParser(interpolation=None)
    parser.optionxform= str
    for name, items in sections.items():
        if items:
            parser[name]= items

    with open(path, 'w') as f:
        parser.write(f)
