import json
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from dinrank.data import FeatureStats
from dinrank.errors import CheckpointError
from dinrank.numeric import BatchNormState, ParamStore
from dinrank.scorers import ScorerSpec, score

MAGIC= 'DINRANK'
FORMAT_VERSION= 1


@dataclass
class Checkpoint:
    '''Everything needed to score with (or resume) a model.

    Stochastic ops draw from counter-based streams keyed by (seed, step), so seed and
    step together are the generator state.
    '''

    spec: ScorerSpec
    params: ParamStore
    step: int= 0
    seed: int= 0
    stats: Optional[FeatureStats]= None
    accumulators: Optional[Dict[str, np.ndarray]]= None

    @property
    def dtype(self):
        return self.params.dtype

    def score(self, docs, mask=None, context=None):
        return score(self.spec, self.params, docs, mask, mode='infer', context=context)

    def snapshot(self):
        accumulators= None if self.accumulators is None else {k: v.copy() for k, v in self.accumulators.items()}
        return Checkpoint(self.spec, self.params.copy(), self.step, self.seed, self.stats, accumulators)


def save_checkpoint(path, checkpoint):
    '''Single-file container: an npz archive whose header member is JSON text.'''

    header= dict(magic=MAGIC, version=FORMAT_VERSION, spec=checkpoint.spec.model_dump(mode='json'),
                 step=int(checkpoint.step), seed=int(checkpoint.seed), dtype=checkpoint.dtype.name,
                 normalized=checkpoint.stats is not None, resumable=checkpoint.accumulators is not None)

    arrays= {'header': np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for name, value in checkpoint.params.params.items():
        arrays[f'param/{name}']= value
    for name, state in checkpoint.params.states.items():
        if state.initialized:
            arrays[f'state/{name}/mean']= state.mean
            arrays[f'state/{name}/var']= state.var
    if checkpoint.stats is not None:
        arrays['stats/mean']= checkpoint.stats.mean
        arrays['stats/std']= checkpoint.stats.std
    if checkpoint.accumulators is not None:
        for name, value in checkpoint.accumulators.items():
            arrays[f'accum/{name}']= value

    # a file handle keeps numpy from appending .npz to the name
    with open(path, 'wb') as f:
        np.savez(f, **arrays)


def _members(archive, prefix):
    return {key[len(prefix):]: archive[key] for key in archive.files if key.startswith(prefix)}


def load_checkpoint(path):

    try:
        archive= np.load(path, allow_pickle=False)
    except ValueError:
        raise CheckpointError(f'{path} is not a checkpoint') from None
    if not hasattr(archive, 'files'):
        raise CheckpointError(f'{path} is a bare array, not a checkpoint')

    with archive:
        if 'header' not in archive.files:
            raise CheckpointError(f'{path} is not a checkpoint: no header')
        header= json.loads(archive['header'].tobytes().decode())
        if header.get('magic') != MAGIC:
            raise CheckpointError(f'{path} is not a checkpoint: bad magic {header.get("magic")!r}')
        if header.get('version', 0) > FORMAT_VERSION:
            raise CheckpointError(f'{path} has format version {header["version"]}, '
                                  f'this release reads up to {FORMAT_VERSION}')

        params= ParamStore(header['dtype'])
        for name, value in _members(archive, 'param/').items():
            params.add(name, value)

        states= _members(archive, 'state/')
        for key in states:
            name, _, part= key.rpartition('/')
            if part == 'mean':
                params.states[name]= BatchNormState(states[key], states[f'{name}/var'])

        stats= None
        if header.get('normalized'):
            stats= FeatureStats(archive['stats/mean'], archive['stats/std'])

        accumulators= _members(archive, 'accum/') if header.get('resumable') else None

    return Checkpoint(ScorerSpec.model_validate(header['spec']), params, header['step'], header['seed'],
                      stats, accumulators)
