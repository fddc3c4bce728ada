'''
File holding the deterministic federated training loop: data partitioning, local training, attack
orchestration, the defense call and the per-round records a metrics report is built from.
'''
from __future__ import annotations

import math
import time
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

import mlp
from attacks import AttackKind, AttackMode, AttackPlan, PoisonResult, acceptance_test, faker_backdoor, \
    faker_for_defense, faker_sybil, la_attack, mb_attack, output_layer_subset
from configuration import VERSION, ExperimentConfig
from datasets import SimDataset, backdoored, load_dataset, split
from defenses import AggregationOutcome, ClientUpdate, Defense, DefenseContext, DefenseKind, NoSurvivorsError, \
    build_defense
from mlp import OptimizerSpec
from model_core import ModelVector, flatten, partition_groups
from report import MetricsReport
from similarity import l2_norm, model_difference
from uni_chars import *

HIDDEN_UNITS = 32
LOSS_TRIGGER_RATIO = 1.1
TRIGGER_SIZE = 4
BIAS_SAMPLE_COUNT = 2

ALL_ACCEPTED_RULES = (DefenseKind.FEDAVG, DefenseKind.NORM_CLIPPING, DefenseKind.FLTRUST, DefenseKind.FLAME,
                      DefenseKind.DIVERSEFL, DefenseKind.FOOLSGOLD, DefenseKind.ERR)


class SimulationError(RuntimeError):
    def __init__(self, round_index: int, message: str) -> None:
        super().__init__(f"{ERROR} Round {round_index}: {message}")
        self.round_index = round_index


def _seed_of(sequence: np.random.SeedSequence) -> int:
    return int(sequence.generate_state(1)[0])


class ClientShard:
    def __init__(self, client_id: int, indices: np.ndarray, label_set: FrozenSet[int]) -> None:
        self.client_id = client_id
        self.indices = np.asarray(indices, dtype=np.int64)
        self.label_set = label_set

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def __str__(self) -> str:
        return f"ClientShard({self.client_id}: {self.size} examples, labels {sorted(self.label_set)})"

    def __repr__(self) -> str:
        return self.__str__()


def _shards(dataset: SimDataset, parts: Sequence[Sequence[int]]) -> List[ClientShard]:
    shards = []
    for cid, part in enumerate(parts):
        indices = np.sort(np.asarray(part, dtype=np.int64))
        shards.append(ClientShard(cid, indices, frozenset(int(x) for x in np.unique(dataset.labels[indices]))))
    return shards


def partition_by_label_count(ds: SimDataset, n: int, c: int, rng: np.random.Generator) -> List[ClientShard]:
    '''
    Client i holds the classes (i*c + k) mod C for k < c, every class is split evenly among its holders.
    c = C is the IID split.
    '''
    classes = ds.num_classes
    if n < 1:
        raise ValueError(f"{ERROR} Need at least one client, got n={n}")
    if not 1 <= c <= classes:
        raise ValueError(f"{ERROR} Classes per client must lie in [1, {classes}], got c={c}")
    if n * c < classes:
        raise ValueError(f"{ERROR} n*c = {n * c} leaves some of the {classes} classes without a client")

    holders: Dict[int, List[int]] = {k: [] for k in range(classes)}
    for cid in range(n):
        for k in range(c):
            holders[(cid * c + k) % classes].append(cid)

    parts: List[List[int]] = [[] for _ in range(n)]
    for label in range(classes):
        examples = rng.permutation(np.flatnonzero(ds.labels == label))
        if examples.size < len(holders[label]):
            raise ValueError(f"{ERROR} Class {label} has {examples.size} examples for {len(holders[label])} clients")
        for cid, chunk in zip(holders[label], np.array_split(examples, len(holders[label]))):
            parts[cid].extend(chunk.tolist())
    return _shards(ds, parts)


def partition_dirichlet(ds: SimDataset, n: int, concentration: float, rng: np.random.Generator) -> List[ClientShard]:
    '''
    Per class, the share of every client is drawn from a symmetric Dirichlet distribution.
    '''
    if n < 1:
        raise ValueError(f"{ERROR} Need at least one client, got n={n}")
    if concentration <= 0:
        raise ValueError(f"{ERROR} Concentration must be positive, got {concentration}")

    parts: List[List[int]] = [[] for _ in range(n)]
    for label in range(ds.num_classes):
        examples = rng.permutation(np.flatnonzero(ds.labels == label))
        proportions = rng.dirichlet(np.full(n, concentration))
        cuts = (np.cumsum(proportions)[:-1] * examples.size).astype(np.int64)
        for cid, chunk in enumerate(np.split(examples, cuts)):
            parts[cid].extend(chunk.tolist())
    return _shards(ds, parts)


class LocalTrainingResult:
    def __init__(self, model: ModelVector, losses: List[float], warning: Optional[str] = None) -> None:
        self.model = model
        self.losses = losses
        self.warning = warning

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else math.nan


def local_train(start: ModelVector, shard: ClientShard, dataset: SimDataset, epochs: int,
                optimizer: OptimizerSpec, rng: np.random.Generator, batch_size: int = 32) -> LocalTrainingResult:
    '''
    Trains the perceptron from `start` on the shard with a fresh optimizer.

    :param epochs: Passes over the shard, 0 returns `start` unchanged.
    :param rng: The client's own stream, consumed by the minibatch shuffling.
    '''
    if epochs < 0:
        raise ValueError(f"{ERROR} Epochs must be non-negative, got {epochs}")
    if epochs == 0:
        return LocalTrainingResult(start, [])
    if shard.size == 0:
        return LocalTrainingResult(start, [], f"client {shard.client_id} has an empty shard")

    params = mlp.params_of(start)
    losses = mlp.train(params, dataset.features[shard.indices], dataset.labels[shard.indices], epochs,
                       optimizer.build(), batch_size, rng)
    return LocalTrainingResult(flatten(params), losses)


class ClientRecord:
    def __init__(self, model: ModelVector, poisoned: bool, accepted: bool, weight: float, loss: float) -> None:
        self.model = model
        self.poisoned = poisoned
        self.accepted = accepted
        self.weight = weight
        self.loss = loss


class RoundRecord:
    '''
    What happened in one communication round. `attack_time_seconds` covers a single attacker's
    poison generation, local training and the defense are timed separately.
    '''

    def __init__(self, round_index: int, global_model: ModelVector, clients: Dict[int, ClientRecord],
                 attacked: bool, attack_success: bool, attack_time_seconds: float, defense_seconds: float,
                 test_error: float, bias_delta: float, bias_samples: List[List[float]], skipped: bool,
                 poison_failures: int, main_accuracy: Optional[float] = None,
                 targeted_accuracy: Optional[float] = None) -> None:
        self.round = round_index
        self.global_model = global_model
        self.clients = clients
        self.attacked = attacked
        self.attack_success = attack_success
        self.attack_time_seconds = attack_time_seconds
        self.defense_seconds = defense_seconds
        self.test_error = test_error
        self.bias_delta = bias_delta
        self.bias_samples = bias_samples
        self.skipped = skipped
        self.poison_failures = poison_failures
        self.main_accuracy = main_accuracy
        self.targeted_accuracy = targeted_accuracy

    @property
    def accepted_count(self) -> int:
        return sum(1 for c in self.clients.values() if c.accepted)

    def __str__(self) -> str:
        return (f"RoundRecord({self.round}: ER={self.test_error:.4f}, accepted={self.accepted_count}/"
                f"{len(self.clients)}, attacked={self.attacked}, success={self.attack_success})")

    def __repr__(self) -> str:
        return self.__str__()


class SimState:
    '''
    Mutable state carried between rounds. Histories only ever accumulate.
    '''

    def __init__(self, global_model: ModelVector, histories: Dict[int, np.ndarray],
                 shadow_histories: Dict[int, np.ndarray], client_rngs: Dict[int, np.random.Generator],
                 attack_rngs: Dict[int, np.random.Generator], server_rng: np.random.Generator) -> None:
        self.global_model = global_model
        self.histories = histories
        self.shadow_histories = shadow_histories
        self.round_index = 0
        self.client_rngs = client_rngs
        self.attack_rngs = attack_rngs
        self.server_rng = server_rng
        self.previous_losses: Dict[int, float] = {}
        self.attack_fired = False


def judge_attack_success(defense_kind: DefenseKind, outcome: AggregationOutcome, malicious_ids: Sequence[int]) -> bool:
    '''
    Krum: a poison is selected. ShieldFL: the smallest poison share of the aggregate exceeds the mean
    benign share.
    Every other rule: no poison is discarded.
    '''
    if not malicious_ids:
        return False
    if defense_kind == DefenseKind.KRUM:
        return outcome.selected in malicious_ids
    if defense_kind == DefenseKind.SHIELDFL:
        shares = outcome.contributions or outcome.weights
        poisoned = [shares.get(cid, 0.0) for cid in malicious_ids]
        benign = [s for cid, s in shares.items() if cid not in malicious_ids]
        if not benign:
            return min(poisoned) > 0
        return min(poisoned) > float(np.mean(benign))
    if defense_kind in ALL_ACCEPTED_RULES:
        return all(outcome.accepted.get(cid, False) for cid in malicious_ids)
    raise ValueError(f"{ERROR} Unknown defense kind {defense_kind}")


class Simulation:
    '''
    One experiment: data, shards, malicious clients, defense and attack plan, all derived from the
    configuration and its master seed.
    '''

    def __init__(self, config: ExperimentConfig, verbose: bool = False) -> None:
        config.post_validate()
        self.config = config
        self.verbose = verbose

        root = np.random.SeedSequence(config.master_seed)
        data_seq, partition_seq, model_seq, client_seq, attack_seq, server_seq, sample_seq, defense_seq = root.spawn(8)
        self._client_seeds = client_seq.spawn(config.n)
        self._attack_seeds = attack_seq.spawn(config.n)
        clean_seq, self._server_seed = server_seq.spawn(2)
        malicious_seq, bias_seq = sample_seq.spawn(2)
        self._defense_seed = _seed_of(defense_seq)

        dataset = load_dataset(config.dataset_source, _seed_of(data_seq))
        self.train_set, self.test_set = split(dataset, config.dataset_test_fraction, _seed_of(data_seq))
        clean_size = min(config.dataset_clean_size, self.test_set.size)
        clean_idx = np.sort(np.random.default_rng(clean_seq).choice(self.test_set.size, clean_size, replace=False))
        self.clean_set = self.test_set.subset(clean_idx)
        self.clean_shard = ClientShard(-1, np.arange(clean_size), frozenset(np.unique(self.clean_set.labels).tolist()))

        partition_rng = np.random.default_rng(partition_seq)
        if config.partition_kind == 'label_count':
            self.shards = partition_by_label_count(self.train_set, config.n, config.partition_c, partition_rng)
        else:
            self.shards = partition_dirichlet(self.train_set, config.n, config.partition_concentration, partition_rng)

        chosen = np.random.default_rng(malicious_seq).choice(config.n, config.m, replace=False) if config.m else []
        self.malicious_ids: List[int] = sorted(int(x) for x in chosen)

        self.initial_model = mlp.initial_model(self.train_set.feature_count, HIDDEN_UNITS, self.train_set.num_classes,
                                               np.random.default_rng(model_seq))
        self.bias_indices = np.sort(np.random.default_rng(bias_seq).choice(self.initial_model.dim, BIAS_SAMPLE_COUNT,
                                                                           replace=False))

        self.defense_kind = config.defense
        self.defense: Defense = build_defense(self.defense_kind, config.defense_spp_fraction, self._defense_seed,
                                              config.defense_spp_tolerance)
        self.plan: Optional[AttackPlan] = None
        if config.attack is not None:
            partition = partition_groups(self.initial_model, config.strategy, config.attack_groups)
            self.plan = AttackPlan(config.attack, self.defense_kind, config.mode, partition, config.attack_margin,
                                   rng_seed=config.master_seed, m=max(config.m, 1))

        self.backdoor_target = config.attack_backdoor_target
        self.triggered_test: Optional[SimDataset] = None
        if config.attack == AttackKind.FAKER_BACKDOOR:
            others = np.flatnonzero(self.test_set.labels != self.backdoor_target)
            self.triggered_test = backdoored(self.test_set.subset(others), self.backdoor_target, TRIGGER_SIZE)

        if verbose:
            print(f"{DATASET} {self.train_set.size} training / {self.test_set.size} test examples, J={self.initial_model.dim}")
            print(f"{CLIENT} Malicious clients: {self.malicious_ids}")

    def initial_state(self) -> SimState:
        dim = self.initial_model.dim
        n = self.config.n
        return SimState(self.initial_model,
                        {cid: np.zeros(dim) for cid in range(n)},
                        {cid: np.zeros(dim) for cid in range(n)},
                        {cid: np.random.default_rng(self._client_seeds[cid]) for cid in range(n)},
                        {cid: np.random.default_rng(self._attack_seeds[cid]) for cid in range(n)},
                        np.random.default_rng(self._server_seed))

    def _train(self, start: ModelVector, shard: ClientShard, dataset: SimDataset,
               rng: np.random.Generator) -> LocalTrainingResult:
        cfg = self.config
        return local_train(start, shard, dataset, cfg.training_local_epochs, cfg.optimizer, rng,
                           cfg.training_batch_size)

    def _should_attack(self, state: SimState, plan: Optional[AttackPlan], malicious_ids: Sequence[int],
                       losses: Dict[int, float]) -> bool:
        if plan is None or not malicious_ids:
            return False
        if not self.config.single_round_attack:
            return True
        if state.attack_fired:
            return False
        previous = state.previous_losses.get(malicious_ids[0])
        current = losses[malicious_ids[0]]
        if previous is None or not math.isfinite(previous) or not math.isfinite(current):
            return False
        return current < LOSS_TRIGGER_RATIO * previous

    def _backdoor_model(self, start: ModelVector, cid: int, rng: np.random.Generator) -> ModelVector:
        local = self.train_set.subset(self.shards[cid].indices)
        stamped = backdoored(local, self.backdoor_target, TRIGGER_SIZE)
        poisoned_set = SimDataset(np.vstack([local.features, stamped.features]),
                                  np.concatenate([local.labels, stamped.labels]), local.num_classes)
        whole = ClientShard(cid, np.arange(poisoned_set.size), frozenset(np.unique(poisoned_set.labels).tolist()))
        return self._train(start, whole, poisoned_set, rng).model

    def targeted_accuracy(self, model: ModelVector) -> float:
        '''
        Share of the triggered test examples of other classes that the model assigns to the backdoor target.
        '''
        if self.triggered_test is None:
            raise ValueError(f"{ERROR} No backdoor attack configured")
        if self.triggered_test.size == 0:
            return 0.0
        return 1.0 - mlp.error_rate(model, self.triggered_test.features, self.triggered_test.labels)

    def _generate_poisons(self, state: SimState, plan: AttackPlan, attackers: Sequence[int],
                          benign: Dict[int, ModelVector], w_g: ModelVector) -> Tuple[Dict[int, ModelVector], float, int]:
        '''
        Poisons of every attacker, the generation time of the first attacker and the number of failed constructions.
        '''
        cfg = self.config
        n, m = cfg.n, len(attackers)
        first = attackers[0]
        results: Dict[int, PoisonResult] = {}
        elapsed = 0.0

        def construct(kind: DefenseKind, w: ModelVector, rng: np.random.Generator,
                      mode: AttackMode = AttackMode.SINGLE) -> PoisonResult:
            return faker_for_defense(kind, w, w_g, plan.partition, rng, n, m, mode, plan.margin, cfg.defense_kappa,
                                     cfg.defense_flame_cluster_distance, cfg.defense_norm_upper)

        if plan.kind == AttackKind.FAKER and plan.mode == AttackMode.COOPERATIVE:
            intermediate = w_g.with_values(np.mean(np.stack([benign[c].values for c in attackers]), axis=0))
            if plan.target_defense == DefenseKind.KRUM:
                start = time.perf_counter()
                shared = construct(DefenseKind.KRUM, intermediate, state.attack_rngs[first], AttackMode.COOPERATIVE)
                elapsed = time.perf_counter() - start
                results = {c: shared for c in attackers}
            else:
                for c in attackers:
                    start = time.perf_counter()
                    results[c] = construct(plan.target_defense, intermediate, state.attack_rngs[c])
                    if c == first:
                        elapsed = time.perf_counter() - start

        elif plan.kind == AttackKind.FAKER:
            for c in attackers:
                start = time.perf_counter()
                results[c] = construct(plan.target_defense, benign[c], state.attack_rngs[c])
                if c == first:
                    elapsed = time.perf_counter() - start

        elif plan.kind in (AttackKind.LA, AttackKind.MB):
            for c in attackers:
                start = time.perf_counter()
                accept = acceptance_test(plan.target_defense, benign[c], w_g, n, cfg.defense_kappa,
                                         cfg.defense_norm_lower_ratio, cfg.defense_flame_cluster_distance)
                if plan.kind == AttackKind.LA:
                    results[c] = la_attack(benign[c], accept, state.attack_rngs[c])
                else:
                    results[c] = mb_attack(benign[c], accept)
                if c == first:
                    elapsed = time.perf_counter() - start

        elif plan.kind == AttackKind.DUPLICATE:
            start = time.perf_counter()
            shared = construct(plan.target_defense, benign[first], state.attack_rngs[first])
            elapsed = time.perf_counter() - start
            results = {c: shared for c in attackers}

        elif plan.kind == AttackKind.FAKER_SYBIL:
            start = time.perf_counter()
            sybils = faker_sybil(benign[first], m, plan.target_defense, state.attack_rngs[first], w_g, n,
                                 plan.margin, cfg.defense_kappa, cfg.defense_flame_cluster_distance)
            elapsed = (time.perf_counter() - start) / m
            results = dict(zip(attackers, sybils))

        elif plan.kind == AttackKind.FAKER_BACKDOOR:
            for c in attackers:
                backdoored = self._backdoor_model(w_g, c, state.attack_rngs[c])
                start = time.perf_counter()
                accept = acceptance_test(plan.target_defense, benign[c], w_g, n, cfg.defense_kappa,
                                         cfg.defense_norm_lower_ratio, cfg.defense_flame_cluster_distance)
                results[c] = faker_backdoor(backdoored, output_layer_subset(backdoored), accept)
                if c == first:
                    elapsed = time.perf_counter() - start

        else:
            raise ValueError(f"{ERROR} Unknown attack kind {plan.kind}")

        failures = sum(1 for r in results.values() if r.failed)
        if failures and self.verbose:
            print(f"{WARN} {failures} of {m} poison constructions did not meet their constraints")
        return {c: r.poisoned for c, r in results.items()}, elapsed, failures

    def _context(self, server_model: ModelVector, benign: Dict[int, ModelVector], w_g: ModelVector,
                 round_index: int, histories: Dict[int, np.ndarray]) -> DefenseContext:
        cfg = self.config
        upper = cfg.defense_norm_upper if cfg.defense_norm_upper is not None else max(l2_norm(b) for b in benign.values())
        clean = self.clean_set
        return DefenseContext(server_model=server_model,
                              norm_bounds=(cfg.defense_norm_lower_ratio * upper, upper),
                              m_assumed=cfg.m,
                              history=histories,
                              rng_seed=_seed_of(np.random.SeedSequence([self._defense_seed, round_index])),
                              clean_eval=lambda model: mlp.error_rate(model, clean.features, clean.labels),
                              previous_global=w_g,
                              kappa=cfg.defense_kappa,
                              err_tau=cfg.defense_err_tau,
                              flame_noise=cfg.defense_flame_noise,
                              flame_cluster_distance=cfg.defense_flame_cluster_distance)

    @staticmethod
    def _aggregate(defense: Defense, updates: Sequence[ClientUpdate],
                   ctx: DefenseContext) -> Tuple[AggregationOutcome, bool]:
        try:
            return defense(updates, ctx), False
        except NoSurvivorsError as e:
            return e.outcome, True

    def run_round(self, state: SimState, defense: Defense, attack_plan: Optional[AttackPlan],
                  malicious_ids: Sequence[int]) -> RoundRecord:
        '''
        Local training, poisoning, aggregation and bookkeeping of one round. The shadow global is the
        same round aggregated with every client submitting its benign model.
        '''
        cfg = self.config
        round_index = state.round_index
        w_g = state.global_model
        attackers = sorted(malicious_ids)
        if any(not 0 <= c < cfg.n for c in attackers):
            raise ValueError(f"{ERROR} Malicious ids {attackers} are not clients of n={cfg.n}")

        benign: Dict[int, ModelVector] = {}
        losses: Dict[int, float] = {}
        for shard in self.shards:
            result = self._train(w_g, shard, self.train_set, state.client_rngs[shard.client_id])
            if result.warning and self.verbose:
                print(f"{WARN} {result.warning}")
            benign[shard.client_id] = result.model
            losses[shard.client_id] = result.final_loss
        server_model = self._train(w_g, self.clean_shard, self.clean_set, state.server_rng).model

        attacked = self._should_attack(state, attack_plan, attackers, losses)
        poisons: Dict[int, ModelVector] = {}
        attack_time, failures = 0.0, 0
        if attacked:
            assert attack_plan is not None
            poisons, attack_time, failures = self._generate_poisons(state, attack_plan, attackers, benign, w_g)
            state.attack_fired = True

        submissions = {cid: poisons.get(cid, benign[cid]) for cid in range(cfg.n)}
        for cid in range(cfg.n):
            state.histories[cid] = state.histories[cid] + (submissions[cid].values - w_g.values)
            state.shadow_histories[cid] = state.shadow_histories[cid] + (benign[cid].values - w_g.values)

        sizes = {s.client_id: max(1, s.size) for s in self.shards}
        updates = [ClientUpdate(cid, submissions[cid], sizes[cid], round_index) for cid in range(cfg.n)]
        ctx = self._context(server_model, benign, w_g, round_index, state.histories)
        start = time.perf_counter()
        outcome, skipped = self._aggregate(defense, updates, ctx)
        defense_seconds = time.perf_counter() - start
        new_global = w_g if skipped else outcome.global_model
        if skipped and self.verbose:
            print(f"{WARN} Round {round_index}: every submission was rejected, global model carried over")

        shadow_global = new_global
        if poisons:
            shadow_updates = [ClientUpdate(cid, benign[cid], sizes[cid], round_index) for cid in range(cfg.n)]
            shadow_ctx = self._context(server_model, benign, w_g, round_index, state.shadow_histories)
            shadow_outcome, shadow_skipped = self._aggregate(defense, shadow_updates, shadow_ctx)
            shadow_global = w_g if shadow_skipped else shadow_outcome.global_model

        test_error = mlp.error_rate(new_global, self.test_set.features, self.test_set.labels)
        success = judge_attack_success(self.defense_kind, outcome, attackers) if attacked else False

        main_accuracy, targeted_accuracy = None, None
        if self.triggered_test is not None:
            main_accuracy = 1.0 - test_error
            targeted_accuracy = self.targeted_accuracy(new_global)

        clients = {cid: ClientRecord(submissions[cid], cid in poisons, outcome.accepted.get(cid, False),
                                     outcome.weights.get(cid, 0.0), losses[cid]) for cid in range(cfg.n)}
        record = RoundRecord(round_index, new_global, clients, attacked, success, attack_time, defense_seconds,
                             test_error, model_difference(new_global, shadow_global),
                             [[int(j), float(new_global.values[j]), float(shadow_global.values[j])]
                              for j in self.bias_indices],
                             skipped, failures, main_accuracy, targeted_accuracy)

        state.global_model = new_global
        state.round_index += 1
        state.previous_losses = losses
        return record

    def report(self, records: Sequence[RoundRecord]) -> MetricsReport:
        cfg = self.config
        attacked = [r for r in records if r.attacked]
        sr = sum(1 for r in attacked if r.attack_success) / len(attacked) if attacked else 0.0
        tc = float(np.mean([r.attack_time_seconds for r in attacked])) if attacked else 0.0
        series = {
            'test_error': [r.test_error for r in records],
            'attacked': [r.attacked for r in records],
            'attack_success': [r.attack_success for r in records],
            'bias_delta': [r.bias_delta for r in records],
            'bias_samples': [r.bias_samples for r in records],
            'accepted': [r.accepted_count for r in records],
            'skipped': [r.skipped for r in records],
            'poison_failures': [r.poison_failures for r in records],
            'tc_seconds': [r.attack_time_seconds for r in records],
            'defense_seconds': [r.defense_seconds for r in records],
        }
        ma, ta = None, None
        if cfg.attack == AttackKind.FAKER_BACKDOOR:
            series['main_accuracy'] = [r.main_accuracy for r in records]
            series['targeted_accuracy'] = [r.targeted_accuracy for r in records]
            ma, ta = records[-1].main_accuracy, records[-1].targeted_accuracy
        return MetricsReport(cfg.defense_label, cfg.attack_kind, cfg.n, cfg.m, cfg.partition_label, cfg.rounds,
                             cfg.master_seed, records[-1].test_error, sr, tc, series, cfg.to_document(), VERSION,
                             ma, ta)


def run_experiment(config: ExperimentConfig, verbose: bool = False) -> MetricsReport:
    '''
    Runs every round of the configured experiment. Failures are re-raised with their round index.
    '''
    simulation = Simulation(config, verbose=verbose)
    state = simulation.initial_state()
    if verbose:
        print(f"{LAUNCH} {config}")

    records: List[RoundRecord] = []
    for round_index in range(config.rounds):
        try:
            record = simulation.run_round(state, simulation.defense, simulation.plan, simulation.malicious_ids)
        except SimulationError:
            raise
        except Exception as e:
            raise SimulationError(round_index, str(e)) from e
        records.append(record)
        if verbose:
            print(f"{ROUND} Round {round_index}: ER={record.test_error:.4f}, "
                  f"accepted {record.accepted_count}/{config.n}, attack success {record.attack_success}")

    report = simulation.report(records)
    if verbose:
        print(f"{SUCCESS} {report}")
    return report


def model_dimension(config: ExperimentConfig) -> int:
    '''
    Parameter count J of the perceptron for the configured dataset.
    '''
    dataset = load_dataset(config.dataset_source, config.master_seed)
    inputs, classes = dataset.feature_count, dataset.num_classes
    return inputs * HIDDEN_UNITS + HIDDEN_UNITS + HIDDEN_UNITS * classes + classes
