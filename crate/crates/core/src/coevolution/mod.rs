//! Two-population genetic search over filter masks.
//!
//! Population `P` holds genomes for `G1`, population `Q` for `G2`. Each
//! generation first scores `P` against `Q`'s previous elite, then `Q`
//! against `P`'s previous elite, keeps each elite in slot 0 and refills the
//! other slots by roulette-driven copy, crossover and mutation.

mod evaluators;
mod oracle;

pub use evaluators::{finetune_config, CostOnly, Evaluator, GanEvaluator};
pub use oracle::{exhaustive_oracle, ORACLE_MAX_BITS};

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::Genome;
use crate::models::{DisMap, Direction, FidelityLoss, Reduction};

/// Fitness assigned to an individual whose evaluation blew up.
pub const FLAGGED_FITNESS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    /// Individuals per population (`K`).
    pub population: usize,
    /// Generations (`T`).
    pub generations: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub mutation_rate: f64,
    /// `s < theta_sel` copies a parent.
    pub theta_sel: f64,
    /// `theta_sel <= s < theta_cx` crosses two parents; the rest mutate.
    pub theta_cx: f64,
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    /// Subset samples averaged per fine-tune update.
    pub finetune_batch: usize,
    pub subset_fraction: f64,
    pub init_density: f64,
    /// Place the unpruned genome in slot 0 of each initial population.
    pub seed_unpruned: bool,
    pub fidelity: FidelityLoss,
    /// What the discriminator-aware term compares.
    pub dis_map: DisMap,
    pub reduction: Reduction,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 8,
            generations: 30,
            gamma: 10.0,
            lambda: 10.0,
            mutation_rate: 0.02,
            theta_sel: 0.3,
            theta_cx: 0.8,
            finetune_steps: 20,
            finetune_lr: 1e-3,
            finetune_batch: 4,
            subset_fraction: 0.1,
            init_density: 0.65,
            seed_unpruned: false,
            fidelity: FidelityLoss::DisAware,
            dis_map: DisMap::Probabilities,
            reduction: Reduction::Mean,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.population < 2 {
            return fail(format!("population must be at least 2, got {}", self.population));
        }
        if self.generations < 1 {
            return fail("generations must be at least 1".into());
        }
        if !(self.gamma > 0.0) || !(self.lambda > 0.0) {
            return fail(format!("gamma ({}) and lambda ({}) must be positive", self.gamma, self.lambda));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return fail(format!("mutation_rate {} outside [0, 1]", self.mutation_rate));
        }
        if !(0.0 <= self.theta_sel && self.theta_sel <= self.theta_cx && self.theta_cx <= 1.0) {
            return fail(format!(
                "thresholds must satisfy 0 <= theta_sel ({}) <= theta_cx ({}) <= 1",
                self.theta_sel, self.theta_cx
            ));
        }
        if !(self.init_density > 0.0 && self.init_density <= 1.0) {
            return fail(format!("init_density {} outside (0, 1]", self.init_density));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction < 1.0) {
            return fail(format!("subset_fraction {} outside (0, 1)", self.subset_fraction));
        }
        if !(self.finetune_lr > 0.0) {
            return fail(format!("finetune_lr must be positive, got {}", self.finetune_lr));
        }
        if self.finetune_batch == 0 {
            return fail("finetune_batch must be at least 1".into());
        }
        Ok(())
    }

    pub fn fitness(&self, m: &Metrics) -> f64 {
        fitness(m, self.gamma, self.lambda)
    }
}

/// Mixes a base seed with a path of tags into an independent stream seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut z = base;
    for &t in tags {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(t.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn dir_tag(dir: Direction) -> u64 {
    match dir {
        Direction::G1 => 1,
        Direction::G2 => 2,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub param_cost: f64,
    /// Fidelity term: discriminator-aware, or generator-aware when ablating.
    pub dis_loss: f64,
    pub cyc_loss: f64,
}

impl Metrics {
    pub fn is_finite(&self) -> bool {
        self.param_cost.is_finite() && self.dis_loss.is_finite() && self.cyc_loss.is_finite()
    }
}

/// `1 / (N + γ(L_fid + λ·L_cyc))`.
pub fn fitness(m: &Metrics, gamma: f64, lambda: f64) -> f64 {
    1.0 / (m.param_cost + gamma * (m.dis_loss + lambda * m.cyc_loss))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    pub fitness: Option<f64>,
    pub metrics: Option<Metrics>,
    pub eval_seed: u64,
    /// Evaluation produced a non-finite value; fitness is [`FLAGGED_FITNESS`].
    pub flagged: bool,
}

impl Individual {
    pub fn new(genome: Genome) -> Self {
        Individual {
            genome,
            fitness: None,
            metrics: None,
            eval_seed: 0,
            flagged: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub individuals: Vec<Individual>,
    pub best: usize,
    pub generation: usize,
}

impl Population {
    pub fn elite(&self) -> &Individual {
        &self.individuals[self.best]
    }

    /// Index of the fittest member; ties go to the lowest index so an elite
    /// in slot 0 survives equal-fitness offspring.
    fn argmax(&self) -> Result<usize> {
        let mut best = 0;
        let mut best_f = f64::NEG_INFINITY;
        for (i, ind) in self.individuals.iter().enumerate() {
            let f = ind.fitness.ok_or_else(|| Error::contract("argmax over unevaluated individual"))?;
            if f > best_f {
                best = i;
                best_f = f;
            }
        }
        Ok(best)
    }

    pub fn mean_fitness(&self) -> f64 {
        let n = self.individuals.len() as f64;
        self.individuals.iter().filter_map(|i| i.fitness).sum::<f64>() / n
    }
}

/// Fitness-proportional probabilities.
pub fn selection_probs(pop: &Population) -> Result<Vec<f64>> {
    let fits = pop
        .individuals
        .iter()
        .map(|i| i.fitness.ok_or_else(|| Error::contract("selection over unevaluated individual")))
        .collect::<Result<Vec<_>>>()?;
    probs_from_fitness(&fits)
}

pub fn probs_from_fitness(fits: &[f64]) -> Result<Vec<f64>> {
    if fits.is_empty() || fits.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::contract(format!("fitnesses must be finite and positive: {fits:?}")));
    }
    let total: f64 = fits.iter().sum();
    Ok(fits.iter().map(|f| f / total).collect())
}

/// Roulette-wheel draw.
pub fn roulette(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Each bit from either parent with probability 1/2.
pub fn crossover(a: &Genome, b: &Genome, rng: &mut impl Rng) -> Genome {
    let bits: Vec<bool> = a.bits().zip(b.bits()).map(|(x, y)| if rng.random_bool(0.5) { x } else { y }).collect();
    a.with_bits(bits)
}

/// Flips each bit with probability `rate`. The result is not repaired.
pub fn mutate(g: &Genome, rate: f64, rng: &mut impl Rng) -> Genome {
    let bits: Vec<bool> = g.bits().map(|b| b ^ rng.random_bool(rate)).collect();
    g.with_bits(bits)
}

/// `K − 1` repaired offspring of `parents`.
pub fn breed(parents: &Population, probs: &[f64], cfg: &GaConfig, rng: &mut impl Rng) -> Vec<Genome> {
    let pick = |rng: &mut _| &parents.individuals[roulette(probs, rng)].genome;
    (1..parents.individuals.len())
        .map(|_| {
            let s: f64 = rng.random();
            let child = if s < cfg.theta_sel {
                pick(rng).clone()
            } else if s < cfg.theta_cx {
                let a = pick(rng);
                let b = pick(rng);
                crossover(a, b, rng)
            } else {
                mutate(pick(rng), cfg.mutation_rate, rng)
            };
            child.repair()
        })
        .collect()
}

/// One JSON line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub t: usize,
    pub pop: String,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best_param_cost: f64,
    pub best_dis_loss: f64,
    pub best_cyc_loss: f64,
    pub elite_genome_digest: String,
}

impl GenerationRecord {
    pub const CSV_HEADER: &'static str =
        "t,pop,best_fitness,mean_fitness,best_param_cost,best_dis_loss,best_cyc_loss,elite_genome_digest";

    fn from_population(pop: &Population, dir: Direction) -> Self {
        let e = pop.elite();
        let m = e.metrics.unwrap_or(Metrics {
            param_cost: f64::NAN,
            dis_loss: f64::NAN,
            cyc_loss: f64::NAN,
        });
        GenerationRecord {
            t: pop.generation,
            pop: dir.label().to_string(),
            best_fitness: e.fitness.unwrap_or(f64::NAN),
            mean_fitness: pop.mean_fitness(),
            best_param_cost: m.param_cost,
            best_dis_loss: m.dis_loss,
            best_cyc_loss: m.cyc_loss,
            elite_genome_digest: e.genome.digest(),
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{:e},{:e},{}",
            self.t,
            self.pop,
            self.best_fitness,
            self.mean_fitness,
            self.best_param_cost,
            self.best_dis_loss,
            self.best_cyc_loss,
            self.elite_genome_digest
        )
    }
}

/// Elite fitness before and after the closing synchronized re-evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalEvaluation {
    pub pre: Metrics,
    pub pre_fitness: f64,
    pub post: Metrics,
    pub post_fitness: f64,
}

pub struct CoevolutionResult<A> {
    /// Elites of `P` and `Q`.
    pub best: [Individual; 2],
    /// Evaluation artifacts of the two elites.
    pub artifacts: [A; 2],
    pub history: Vec<GenerationRecord>,
    /// Final populations of every generation, `[P_t, Q_t]`.
    pub snapshots: Vec<[Population; 2]>,
    pub final_eval: [FinalEvaluation; 2],
}

struct Scored<A> {
    ind: Individual,
    artifact: Option<A>,
}

fn score<E: Evaluator>(
    ev: &E,
    cfg: &GaConfig,
    dir: Direction,
    genome: &Genome,
    peer: &E::Artifact,
    seed: u64,
) -> Result<Scored<E::Artifact>> {
    let mut ind = Individual::new(genome.clone());
    ind.eval_seed = seed;
    match ev.evaluate(dir, genome, peer, seed) {
        Ok((m, a)) if m.is_finite() && cfg.fitness(&m).is_finite() && cfg.fitness(&m) > 0.0 => {
            ind.fitness = Some(cfg.fitness(&m));
            ind.metrics = Some(m);
            Ok(Scored { ind, artifact: Some(a) })
        }
        Ok((m, _)) => {
            log::warn!("{} genome {} produced non-finite metrics {m:?}", dir.label(), genome.digest());
            ind.fitness = Some(FLAGGED_FITNESS);
            ind.metrics = Some(m);
            ind.flagged = true;
            Ok(Scored { ind, artifact: None })
        }
        Err(Error::Divergence { step, detail }) => {
            log::warn!("{} genome {} diverged at {step}: {detail}", dir.label(), genome.digest());
            ind.fitness = Some(FLAGGED_FITNESS);
            ind.flagged = true;
            Ok(Scored { ind, artifact: None })
        }
        Err(e) => Err(e),
    }
}

/// Scores every unevaluated member of `genomes` against `peer`, reusing
/// results for duplicate genomes.
fn evaluate_population<E: Evaluator>(
    ev: &E,
    cfg: &GaConfig,
    dir: Direction,
    genomes: Vec<Genome>,
    elite: Option<(Individual, E::Artifact)>,
    peer: &E::Artifact,
    peer_digest: &str,
    t: usize,
) -> Result<(Population, Vec<Option<E::Artifact>>)> {
    let seed = derive_seed(cfg.seed, &[t as u64, dir_tag(dir)]);
    let mut cache: HashMap<(String, String, u64), usize> = HashMap::new();
    let mut unique: Vec<&Genome> = Vec::new();
    let slots: Vec<usize> = genomes
        .iter()
        .map(|g| {
            *cache.entry((g.digest(), peer_digest.to_string(), seed)).or_insert_with(|| {
                unique.push(g);
                unique.len() - 1
            })
        })
        .collect();
    let scored: Vec<Scored<E::Artifact>> = unique
        .par_iter()
        .map(|g| score(ev, cfg, dir, g, peer, seed))
        .collect::<Result<_>>()?;

    let mut individuals = Vec::with_capacity(genomes.len() + 1);
    let mut artifacts = Vec::with_capacity(genomes.len() + 1);
    if let Some((ind, art)) = elite {
        individuals.push(ind);
        artifacts.push(Some(art));
    }
    for s in slots {
        individuals.push(scored[s].ind.clone());
        artifacts.push(scored[s].artifact.clone());
    }
    let mut pop = Population {
        individuals,
        best: 0,
        generation: t,
    };
    pop.best = pop.argmax()?;
    if pop.individuals.iter().any(|i| !i.genome.is_repaired()) {
        return Err(Error::contract(format!("generation {t} holds an unrepaired genome")));
    }
    Ok((pop, artifacts))
}

fn initial_genomes<E: Evaluator>(ev: &E, cfg: &GaConfig, dir: Direction) -> Vec<Genome> {
    let spec = ev.spec(dir);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0, dir_tag(dir), 0xA11]));
    let seeded = usize::from(cfg.seed_unpruned);
    let mut genomes = vec![Genome::ones(spec); seeded];
    genomes.extend((seeded..cfg.population).map(|_| Genome::random_with(spec, cfg.init_density, &mut rng)));
    genomes
}

/// Runs the alternating search for `cfg.generations` generations.
pub fn coevolve<E: Evaluator>(ev: &E, cfg: &GaConfig) -> Result<CoevolutionResult<E::Artifact>> {
    cfg.validate()?;
    let dirs = [Direction::G1, Direction::G2];
    let init_peers = [ev.initial_artifact(Direction::G1)?, ev.initial_artifact(Direction::G2)?];
    let ones_digest = |d: Direction| Genome::ones(ev.spec(d)).digest();

    let mut history = Vec::new();
    let mut snapshots = Vec::new();
    let mut pops: Vec<Population> = Vec::with_capacity(2);
    let mut elites: Vec<(Individual, E::Artifact)> = Vec::with_capacity(2);
    for (i, &dir) in dirs.iter().enumerate() {
        let peer = &init_peers[1 - i];
        let (pop, arts) = evaluate_population(
            ev,
            cfg,
            dir,
            initial_genomes(ev, cfg, dir),
            None,
            peer,
            &format!("init-{}", ones_digest(dir.peer())),
            0,
        )?;
        history.push(GenerationRecord::from_population(&pop, dir));
        let art = arts[pop.best].clone().unwrap_or_else(|| init_peers[i].clone());
        elites.push((pop.elite().clone(), art));
        pops.push(pop);
    }
    snapshots.push([pops[0].clone(), pops[1].clone()]);

    for t in 1..=cfg.generations {
        let prev_elites = elites.clone();
        let mut next = Vec::with_capacity(2);
        let mut next_elites = Vec::with_capacity(2);
        for (i, &dir) in dirs.iter().enumerate() {
            let parents = &pops[i];
            let probs = selection_probs(parents)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[t as u64, dir_tag(dir), 0xB2EED]));
            let offspring = breed(parents, &probs, cfg, &mut rng);
            let (peer_ind, peer_art) = &prev_elites[1 - i];
            let peer_digest = format!("{}-{}", peer_ind.genome.digest(), peer_ind.eval_seed);
            let (pop, arts) =
                evaluate_population(ev, cfg, dir, offspring, Some(prev_elites[i].clone()), peer_art, &peer_digest, t)?;
            history.push(GenerationRecord::from_population(&pop, dir));
            let art = arts[pop.best].clone().expect("elite always carries an artifact");
            next_elites.push((pop.elite().clone(), art));
            next.push(pop);
        }
        log::info!(
            "generation {t}: P best {:.6} Q best {:.6}",
            next[0].elite().fitness.unwrap_or(0.0),
            next[1].elite().fitness.unwrap_or(0.0)
        );
        pops = next;
        elites = next_elites;
        snapshots.push([pops[0].clone(), pops[1].clone()]);
    }

    // closing synchronized re-evaluation of both elites against each other
    let final_seed = cfg.generations as u64 + 1;
    let mut final_eval = Vec::with_capacity(2);
    for (i, &dir) in dirs.iter().enumerate() {
        let (ind, _) = &elites[i];
        let peer = &elites[1 - i].1;
        let seed = derive_seed(cfg.seed, &[final_seed, dir_tag(dir)]);
        let post = score(ev, cfg, dir, &ind.genome, peer, seed)?;
        let nan = Metrics {
            param_cost: f64::NAN,
            dis_loss: f64::NAN,
            cyc_loss: f64::NAN,
        };
        final_eval.push(FinalEvaluation {
            pre: ind.metrics.unwrap_or(nan),
            pre_fitness: ind.fitness.unwrap_or(f64::NAN),
            post: post.ind.metrics.unwrap_or(nan),
            post_fitness: post.ind.fitness.unwrap_or(f64::NAN),
        });
    }

    let [(bp, ap), (bq, aq)]: [(Individual, E::Artifact); 2] =
        elites.try_into().map_err(|_| Error::contract("two populations"))?;
    let [fp, fq]: [FinalEvaluation; 2] = final_eval.try_into().map_err(|_| Error::contract("two populations"))?;
    Ok(CoevolutionResult {
        best: [bp, bq],
        artifacts: [ap, aq],
        history,
        snapshots,
        final_eval: [fp, fq],
    })
}
