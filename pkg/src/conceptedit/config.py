"""Project configuration

A project is described by one YAML file::

    taxonomy: taxonomy.txt
    corpus: corpus.jsonl
    class_pair: [Stop, Move]
    strategy: local-global
    backend: mock
    mock:
      rules:
        - "car -> Stop"
        - "* -> Move"

Relative paths are resolved against the directory of the file. Command-line
flags override values from the file, which override the defaults below.
"""
import functools
import logging
import os
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Optional, Tuple

import yaml

from .backends import (
    ConceptRule, FileImageStore, HttpEndpoint, RemoteClassifier,
    RemoteGrounder, RemoteInpainter, RemoteSelector, ScriptedSelector,
    mock_contracts)
from .editplan import load_corpus
from .exceptions import ConceptEditError, ConfigError
from .ordering import OrderingStrategy
from .pipeline import RunConfig, ServiceContracts
from .prompts import DEFAULT_NEGATIVE_PROMPT
from .schemas import GROUNDING_DEFAULTS, INPAINTING_DEFAULTS
from .taxonomy import CostPolicy, load_taxonomy

__all__ = ['MockSettings', 'RemoteSettings', 'ProjectConfig']

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MockSettings:
    """In-process mock services"""
    rules: Tuple[str, ...] = ()
    noise: float = 0.0
    failure_rate: float = 0.0
    scores: bool = False
    selector_preference: Tuple[str, ...] = ScriptedSelector.ACTIONS
    deprioritize: Tuple[str, ...] = ()
    anchors: Dict[str, str] = field(default_factory=dict)
    backdrops: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class RemoteSettings:
    """HTTP endpoints of real services"""
    classifier: Optional[str] = None
    grounder: Optional[str] = None
    inpainter: Optional[str] = None
    selector: Optional[str] = None
    token_env: str = 'CONCEPTEDIT_TOKEN'
    transport: str = 'path'
    timeout: float = 120.0
    max_concurrency: int = 4
    max_rate: Optional[float] = None
    image_dir: str = 'images'


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError("Section %r must be a mapping" % name)
    known = {f.name for f in fields(cls)}
    unknown = set(data).difference(known)
    if unknown:
        raise ConfigError(
            "Unknown keys in section %r: %s" % (name, sorted(unknown)))
    values = {}
    for (key, value) in data.items():
        if isinstance(value, list):
            value = tuple(value)
        values[key] = value
    return cls(**values)


@functools.lru_cache(maxsize=None)
def _endpoint(url, token, timeout, max_concurrency, max_rate):
    """Endpoint shared by all runs, so that its caps hold across runs"""
    return HttpEndpoint(
        url, token=token, timeout=timeout, max_concurrency=max_concurrency,
        max_rate=max_rate)


@dataclass(frozen=True)
class ProjectConfig:
    """Everything a command needs to know about a project"""
    taxonomy: Optional[str] = None
    corpus: Optional[str] = None
    class_pair: Tuple[str, str] = ()
    strategy: str = OrderingStrategy.LOCAL_GLOBAL.value
    backend: str = 'mock'
    consistency_runs: int = 7
    seed: int = 0
    output_dir: str = 'output'
    nonactionable: Tuple[str, ...] = ()
    max_steps: Optional[int] = None
    candidate_limit: Optional[int] = None
    retries: int = 3
    backoff: float = 0.5
    selector_retries: int = 3
    jobs: int = 1
    negative_prompt: str = DEFAULT_NEGATIVE_PROMPT
    prompt_style: str = 'scene'
    importance_table: Optional[str] = None
    n_bootstrap: int = 0
    grounding: Dict[str, float] = field(
        default_factory=lambda: dict(GROUNDING_DEFAULTS))
    inpainting: Dict[str, object] = field(
        default_factory=lambda: dict(INPAINTING_DEFAULTS))
    mock: MockSettings = field(default_factory=MockSettings)
    remote: RemoteSettings = field(default_factory=RemoteSettings)

    _PATHS = ('taxonomy', 'corpus', 'output_dir', 'importance_table')

    @classmethod
    def from_dict(cls, data, base_dir='.') -> 'ProjectConfig':
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("The configuration must be a mapping")
        data = {'output_dir': cls.output_dir, **data}
        known = {f.name for f in fields(cls)}
        unknown = set(data).difference(known)
        if unknown:
            raise ConfigError("Unknown configuration keys %s" % sorted(unknown))
        values = {}
        for (key, value) in data.items():
            if key == 'mock':
                value = _section(MockSettings, value, key)
            elif key == 'remote':
                value = _section(RemoteSettings, value, key)
            elif key in ('grounding', 'inpainting'):
                defaults = (GROUNDING_DEFAULTS if key == 'grounding'
                            else INPAINTING_DEFAULTS)
                if not isinstance(value, dict):
                    raise ConfigError("Section %r must be a mapping" % key)
                unknown = set(value).difference(defaults)
                if unknown:
                    raise ConfigError(
                        "Unknown keys in section %r: %s"
                        % (key, sorted(unknown)))
                value = dict(defaults, **value)
            elif isinstance(value, list):
                value = tuple(value)
            if key in cls._PATHS and value is not None:
                value = os.path.join(base_dir, str(value))
            values[key] = value
        config = cls(**values)
        if config.remote.image_dir and not os.path.isabs(
                config.remote.image_dir):
            config = replace(config, remote=replace(
                config.remote,
                image_dir=os.path.join(base_dir, config.remote.image_dir)))
        return config

    @classmethod
    def load(cls, filename) -> 'ProjectConfig':
        """Read the YAML configuration file `filename`"""
        try:
            with open(filename, encoding='utf-8') as in_fh:
                data = yaml.safe_load(in_fh)
        except OSError as exc_info:
            raise ConfigError("Cannot read %s: %s" % (filename, exc_info))
        except yaml.YAMLError as exc_info:
            raise ConfigError("Invalid YAML in %s: %s" % (filename, exc_info))
        base_dir = os.path.dirname(os.path.abspath(filename))
        logger.debug("Loaded configuration %s", filename)
        return cls.from_dict(data, base_dir=base_dir)

    def with_overrides(self, **overrides) -> 'ProjectConfig':
        """Copy with all overrides that are not None applied"""
        values = {k: v for (k, v) in overrides.items() if v is not None}
        return replace(self, **values)

    @property
    def source_label(self):
        return self.class_pair[0]

    @property
    def target_label(self):
        return self.class_pair[1]

    def validate(self, check_files=True):
        """Check the configuration as a whole

        Raises:
            ConfigError: describing the first problem found
        """
        if len(self.class_pair) != 2 or len(set(self.class_pair)) != 2:
            raise ConfigError("class_pair must name two different labels")
        try:
            OrderingStrategy(self.strategy)
        except ValueError:
            raise ConfigError(
                "Unknown strategy %r, expected one of %s" % (
                    self.strategy,
                    [s.value for s in OrderingStrategy]))
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.n_bootstrap < 0:
            raise ConfigError("n_bootstrap must be >= 0")
        self.run_config()
        self.cost_policy()
        if self.backend == 'mock':
            if not self.mock.rules:
                raise ConfigError("The mock backend needs classifier rules")
            try:
                rules = [ConceptRule.parse(r) for r in self.mock.rules]
            except ConceptEditError as exc_info:
                raise ConfigError("Invalid mock rule: %s" % exc_info)
            if rules[-1].present or rules[-1].absent:
                raise ConfigError("The last mock rule must be '* -> <label>'")
            if not 0 <= self.mock.noise <= 1:
                raise ConfigError("mock.noise must be in [0, 1]")
            if not 0 <= self.mock.failure_rate <= 1:
                raise ConfigError("mock.failure_rate must be in [0, 1]")
            if sorted(self.mock.selector_preference) != sorted(
                    ScriptedSelector.ACTIONS):
                raise ConfigError(
                    "mock.selector_preference must order %s"
                    % (ScriptedSelector.ACTIONS,))
        elif self.backend == 'remote':
            for name in ('classifier', 'grounder', 'inpainter'):
                if not getattr(self.remote, name):
                    raise ConfigError("remote.%s endpoint is missing" % name)
            if (self.strategy == OrderingStrategy.LOCAL.value
                    and not self.remote.selector):
                raise ConfigError(
                    "The local strategy needs a remote.selector endpoint")
            if self.remote.transport not in ('path', 'base64'):
                raise ConfigError(
                    "remote.transport must be 'path' or 'base64'")
        else:
            raise ConfigError(
                "backend must be 'mock' or 'remote', not %r" % self.backend)
        if check_files:
            for name in ('taxonomy', 'corpus'):
                path = getattr(self, name)
                if path is None:
                    raise ConfigError("No %s file configured" % name)
                if not os.path.isfile(path):
                    raise ConfigError("%s file %s does not exist" % (
                        name, path))
            if (self.importance_table is not None
                    and not os.path.isfile(self.importance_table)):
                raise ConfigError(
                    "importance_table %s does not exist"
                    % self.importance_table)

    def run_config(self) -> RunConfig:
        try:
            return RunConfig(
                strategy=OrderingStrategy(self.strategy),
                consistency_runs=self.consistency_runs,
                max_steps=self.max_steps, seed=self.seed,
                negative_prompt=self.negative_prompt,
                prompt_style=self.prompt_style, retries=self.retries,
                backoff=self.backoff, selector_retries=self.selector_retries,
                candidate_limit=self.candidate_limit,
                **self.grounding, **self.inpainting)
        except (TypeError, ValueError) as exc_info:
            if isinstance(exc_info, ConfigError):
                raise
            raise ConfigError(str(exc_info))

    def cost_policy(self) -> CostPolicy:
        try:
            return CostPolicy.from_strings(self.nonactionable)
        except ConceptEditError as exc_info:
            raise ConfigError("Invalid nonactionable edit: %s" % exc_info)

    def load_taxonomy(self):
        return load_taxonomy(self.taxonomy)

    def load_corpora(self, taxonomy=None):
        """Source-class and target-class annotations of the corpus"""
        corpus = load_corpus(self.corpus, taxonomy=taxonomy)
        corpus_dir = os.path.dirname(os.path.abspath(self.corpus))
        corpus = [
            a if a.image is None or os.path.isabs(a.image)
            else replace(a, image=os.path.join(corpus_dir, a.image))
            for a in corpus]
        sources = [a for a in corpus if a.label == self.source_label]
        targets = [a for a in corpus if a.label == self.target_label]
        return corpus, sources, targets

    def make_contracts(self, seed: int) -> ServiceContracts:
        """Fresh service clients for one run"""
        if self.backend == 'mock':
            selector = ScriptedSelector(
                preference=self.mock.selector_preference,
                deprioritize=self.mock.deprioritize,
                anchors=self.mock.anchors, backdrops=self.mock.backdrops)
            return mock_contracts(
                self.mock.rules, seed=seed, noise=self.mock.noise,
                failure_rate=self.mock.failure_rate, selector=selector,
                scores=self.mock.scores)
        remote = self.remote
        token = os.environ.get(remote.token_env)
        images = FileImageStore(remote.image_dir)

        def client(cls, url):
            if not url:
                return None
            endpoint = _endpoint(
                url, token, remote.timeout, remote.max_concurrency,
                remote.max_rate)
            return cls(endpoint, images, transport=remote.transport)

        return ServiceContracts(
            classifier=client(RemoteClassifier, remote.classifier),
            grounder=client(RemoteGrounder, remote.grounder),
            inpainter=client(RemoteInpainter, remote.inpainter),
            selector=client(RemoteSelector, remote.selector),
            images=images)
