from setuptools import setup, find_packages
from os.path import join as pjoin, dirname
from glob import glob
import sys

sys.path.append(pjoin(dirname(__file__),'dinrank'))
from _version import __version__

requirements= open('requirements.txt').read().split()

setup(name='dinrank',
    version=__version__,
    description='Learning-to-rank with self-attentive document interaction networks, '
                'groupwise and univariate scoring baselines',
    install_requires=requirements,
    entry_points={'console_scripts': ['dinrank=dinrank.cli:main']},
    packages=find_packages(exclude=('*tests*',)),
    package_data={'dinrank':[pjoin('tests','*'), pjoin('tests','data','*')]},
    data_files=[('share/doc/dinrank/data',glob(pjoin('data','*')))],
    python_requires='>=3.10')
