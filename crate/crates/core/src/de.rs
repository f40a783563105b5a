//! Differential evolution over fixed-size subsets of face indices.
//!
//! Genes are 1-based face indices. Mutation is DE/rand/1 on the integer
//! values (rounded and clamped), crossover is binomial with one forced
//! coordinate, and duplicates produced by either are redrawn at random.
//! Fitness is minimized.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    /// Strictly increasing, 1-based, all within `1..=n_m`.
    pub indices: Vec<usize>,
    pub fitness: Option<f64>,
}

impl Individual {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        Self {
            indices,
            fitness: None,
        }
    }

    pub fn validate(&self, n_faces: usize, n_selected: usize) -> Result<()> {
        if self.indices.len() != n_selected {
            return Err(Error::invalid(format!(
                "individual has {} genes, expected {n_selected}",
                self.indices.len()
            )));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("individual genes are not strictly increasing"));
        }
        if self.indices.first().is_some_and(|&i| i < 1) || self.indices.last().is_some_and(|&i| i > n_faces) {
            return Err(Error::invalid(format!("gene outside 1..={n_faces}")));
        }
        Ok(())
    }

    /// Newline-separated index list.
    pub fn to_index_list(&self) -> String {
        self.indices.iter().map(|i| format!("{i}\n")).collect()
    }

    pub fn parse_index_list(text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad face index {t:?}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeConfig {
    pub pop_size: usize,
    pub max_iters: usize,
    pub crossover_rate: f64,
    /// Scale factor applied to the difference vector.
    pub mutation_rate: f64,
    /// Subset size `n_f`.
    pub n_selected: usize,
    pub seed: u64,
}

impl DeConfig {
    pub fn validate(&self, n_faces: usize) -> Result<()> {
        if self.pop_size < 4 {
            return Err(Error::invalid("population must hold at least 4 individuals"));
        }
        if self.max_iters < 1 {
            return Err(Error::invalid("at least one generation is required"));
        }
        for (name, r) in [("crossover", self.crossover_rate), ("mutation", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} rate {r} outside [0, 1]")));
            }
        }
        if self.n_selected == 0 || self.n_selected > n_faces {
            return Err(Error::invalid(format!(
                "cannot select {} of {n_faces} faces",
                self.n_selected
            )));
        }
        Ok(())
    }
}

/// A scalar objective over sorted 1-based index sets. Lower is better.
pub trait Fitness: Sync {
    fn evaluate(&self, indices: &[usize]) -> Result<f64>;
}

/// Separable test objective: the sum of per-face weights.
#[derive(Debug, Clone)]
pub struct AdditiveFitness {
    pub weights: Vec<f64>,
}

impl Fitness for AdditiveFitness {
    fn evaluate(&self, indices: &[usize]) -> Result<f64> {
        Ok(indices.iter().map(|&i| self.weights[i - 1]).sum())
    }
}

/// Thread-safe memo keyed by the sorted index set.
#[derive(Debug, Default)]
pub struct FitnessCache {
    inner: Mutex<HashMap<Vec<usize>, f64>>,
}

impl FitnessCache {
    pub fn get(&self, key: &[usize]) -> Option<f64> {
        self.inner.lock().expect("cache lock").get(key).copied()
    }

    pub fn insert(&self, key: Vec<usize>, value: f64) -> f64 {
        *self.inner.lock().expect("cache lock").entry(key).or_insert(value)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Looks up `key`, computing and storing it on a miss.
    pub fn get_or_evaluate<F: Fitness + ?Sized>(&self, key: &[usize], fitness: &F) -> Result<f64> {
        if let Some(v) = self.get(key) {
            return Ok(v);
        }
        let v = fitness.evaluate(key)?;
        Ok(self.insert(key.to_vec(), v))
    }
}

pub fn init_population<R: Rng>(cfg: &DeConfig, n_faces: usize, rng: &mut R) -> Result<Vec<Individual>> {
    if cfg.n_selected > n_faces {
        return Err(Error::invalid(format!(
            "cannot select {} of {n_faces} faces",
            cfg.n_selected
        )));
    }
    Ok((0..cfg.pop_size)
        .map(|_| Individual::new(sample(rng, n_faces, cfg.n_selected).into_iter().map(|i| i + 1).collect()))
        .collect())
}

/// DE/rand/1: `x_a + r_m (x_b - x_c)` per coordinate, rounded and clamped to
/// `[1, n_m]`. The result may contain duplicates.
pub fn mutate<R: Rng>(
    population: &[Individual],
    target: usize,
    mutation_rate: f64,
    n_faces: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if population.len() < 4 {
        return Err(Error::invalid("mutation needs a population of at least 4"));
    }
    let mut pick = |taken: &[usize]| loop {
        let i = rng.gen_range(0..population.len());
        if !taken.contains(&i) {
            break i;
        }
    };
    let a = pick(&[target]);
    let b = pick(&[target, a]);
    let c = pick(&[target, a, b]);
    let (xa, xb, xc) = (&population[a].indices, &population[b].indices, &population[c].indices);
    Ok(xa
        .iter()
        .zip(xb.iter().zip(xc))
        .map(|(&va, (&vb, &vc))| {
            let v = (va as f64 + mutation_rate * (vb as f64 - vc as f64)).round();
            v.clamp(1.0, n_faces as f64) as usize
        })
        .collect())
}

/// Binomial crossover; coordinate `j_rand` always comes from the mutant.
pub fn crossover<R: Rng>(mutant: &[usize], target: &[usize], crossover_rate: f64, rng: &mut R) -> Result<Vec<usize>> {
    if mutant.len() != target.len() || mutant.is_empty() {
        return Err(Error::shape(target.len(), mutant.len()));
    }
    let forced = rng.gen_range(0..mutant.len());
    Ok((0..mutant.len())
        .map(|k| {
            let take = rng.gen::<f64>() < crossover_rate;
            if k == forced || take {
                mutant[k]
            } else {
                target[k]
            }
        })
        .collect())
}

/// Keeps the first occurrence of every value and redraws the rest uniformly
/// from `1..=n_m` until all genes are distinct.
pub fn repair<R: Rng>(trial: &[usize], n_faces: usize, rng: &mut R) -> Individual {
    let mut seen = vec![false; n_faces + 1];
    let mut genes = Vec::with_capacity(trial.len());
    let mut pending = 0;
    for &v in trial {
        if (1..=n_faces).contains(&v) && !seen[v] {
            seen[v] = true;
            genes.push(v);
        } else {
            pending += 1;
        }
    }
    for _ in 0..pending {
        let v = loop {
            let v = rng.gen_range(1..=n_faces);
            if !seen[v] {
                break v;
            }
        };
        seen[v] = true;
        genes.push(v);
    }
    Individual::new(genes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub population: Vec<Vec<usize>>,
    pub fitness: Vec<f64>,
    pub best: Individual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub seed: u64,
    /// Generation 0 is the initial population.
    pub generations: Vec<GenerationRecord>,
    /// Distinct fitness evaluations (cache misses).
    pub evaluations: usize,
    pub best: Individual,
}

impl SearchReport {
    pub fn best_trace(&self) -> Vec<f64> {
        self.generations
            .iter()
            .map(|g| g.best.fitness.unwrap_or(f64::NAN))
            .collect()
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("generation,best_fitness\n");
        for g in &self.generations {
            s.push_str(&format!("{},{:.9}\n", g.generation, g.best.fitness.unwrap_or(f64::NAN)));
        }
        s
    }
}

/// Evaluates every distinct, uncached key (in parallel when enabled) and
/// returns the fitness of each individual in order.
fn evaluate_all<F: Fitness + ?Sized>(
    individuals: &[Individual],
    fitness: &F,
    cache: &FitnessCache,
    exec: Exec,
) -> Result<(Vec<f64>, usize)> {
    let mut fresh: Vec<Vec<usize>> = Vec::new();
    for ind in individuals {
        if cache.get(&ind.indices).is_none() && !fresh.contains(&ind.indices) {
            fresh.push(ind.indices.clone());
        }
    }
    let results = exec.map(&fresh, |k| cache.get_or_evaluate(k, fitness));
    for r in results {
        let v = r?;
        if !v.is_finite() {
            return Err(Error::NonFinite("fitness"));
        }
    }
    let values = individuals
        .iter()
        .map(|ind| cache.get(&ind.indices).ok_or(Error::NonFinite("fitness cache")))
        .collect::<Result<_>>()?;
    Ok((values, fresh.len()))
}

fn best_of(population: &[Individual]) -> Individual {
    population
        .iter()
        .fold(None::<&Individual>, |best, ind| match best {
            Some(b) if b.fitness <= ind.fitness => Some(b),
            _ => Some(ind),
        })
        .expect("non-empty population")
        .clone()
}

fn record(generation: usize, population: &[Individual]) -> GenerationRecord {
    GenerationRecord {
        generation,
        population: population.iter().map(|i| i.indices.clone()).collect(),
        fitness: population.iter().map(|i| i.fitness.unwrap_or(f64::NAN)).collect(),
        best: best_of(population),
    }
}

/// Runs the search from a given initial population.
pub fn de_search_from<F: Fitness + ?Sized>(
    cfg: &DeConfig,
    n_faces: usize,
    mut population: Vec<Individual>,
    fitness: &F,
    cache: &FitnessCache,
    exec: Exec,
) -> Result<(Individual, SearchReport)> {
    cfg.validate(n_faces)?;
    if population.len() != cfg.pop_size {
        return Err(Error::shape(cfg.pop_size, population.len()));
    }
    for ind in &population {
        ind.validate(n_faces, cfg.n_selected)?;
    }
    // variation operators draw from their own stream, independent of initialization
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let (fit, mut evaluations) = evaluate_all(&population, fitness, cache, exec)?;
    for (ind, f) in population.iter_mut().zip(fit) {
        ind.fitness = Some(f);
    }
    let mut generations = vec![record(0, &population)];
    for generation in 1..=cfg.max_iters {
        let mut trials = Vec::with_capacity(cfg.pop_size);
        for j in 0..cfg.pop_size {
            let mutant = mutate(&population, j, cfg.mutation_rate, n_faces, &mut rng)?;
            let trial = crossover(&mutant, &population[j].indices, cfg.crossover_rate, &mut rng)?;
            let ind = repair(&trial, n_faces, &mut rng);
            ind.validate(n_faces, cfg.n_selected)?;
            trials.push(ind);
        }
        let (fit, fresh) = evaluate_all(&trials, fitness, cache, exec)?;
        evaluations += fresh;
        for ((slot, mut trial), f) in population.iter_mut().zip(trials).zip(fit) {
            if f < slot.fitness.expect("evaluated") {
                trial.fitness = Some(f);
                *slot = trial;
            }
        }
        generations.push(record(generation, &population));
    }
    let best = best_of(&population);
    Ok((
        best.clone(),
        SearchReport {
            seed: cfg.seed,
            generations,
            evaluations,
            best,
        },
    ))
}

/// Full search: random initial population, then `max_iters` generations of
/// mutation, crossover, repair and greedy one-to-one replacement.
pub fn de_search<F: Fitness + ?Sized>(
    cfg: &DeConfig,
    n_faces: usize,
    fitness: &F,
    exec: Exec,
) -> Result<(Individual, SearchReport)> {
    cfg.validate(n_faces)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let population = init_population(cfg, n_faces, &mut rng)?;
    let cache = FitnessCache::default();
    de_search_from(cfg, n_faces, population, fitness, &cache, exec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(pop: usize, n_f: usize) -> DeConfig {
        DeConfig {
            pop_size: pop,
            max_iters: 3,
            crossover_rate: 0.6,
            mutation_rate: 0.6,
            n_selected: n_f,
            seed: 1,
        }
    }

    #[test]
    fn full_selection_is_forced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pop = init_population(&cfg(6, 5), 5, &mut rng).unwrap();
        assert!(pop.iter().all(|i| i.indices == vec![1, 2, 3, 4, 5]));
        assert!(init_population(&cfg(6, 6), 5, &mut rng).is_err());
    }

    #[test]
    fn population_is_valid_and_reproducible() {
        let c = cfg(20, 2);
        let a = init_population(&c, 6, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = init_population(&c, 6, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        for ind in &a {
            ind.validate(6, 2).unwrap();
        }
    }

    #[test]
    fn mutation_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same: Vec<Individual> = (0..5).map(|_| Individual::new(vec![2, 4, 6])).collect();
        assert_eq!(mutate(&same, 0, 0.6, 10, &mut rng).unwrap(), vec![2, 4, 6]);
        let varied: Vec<Individual> = (0..5).map(|i| Individual::new(vec![1 + i, 6 + i])).collect();
        let m = mutate(&varied, 1, 0.0, 10, &mut rng).unwrap();
        assert!(varied.iter().any(|v| v.indices == m));
        // large positive differences clamp at n_m
        let wide = vec![
            Individual::new(vec![9, 10]),
            Individual::new(vec![9, 10]),
            Individual::new(vec![1, 2]),
            Individual::new(vec![9, 10]),
        ];
        for _ in 0..20 {
            let m = mutate(&wide, 3, 1.0, 10, &mut rng).unwrap();
            assert!(m.iter().all(|&v| (1..=10).contains(&v)));
        }
        assert!(mutate(&wide[..3], 0, 0.5, 10, &mut rng).is_err());
    }

    #[test]
    fn crossover_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, t) = (vec![1, 2, 3, 4], vec![5, 6, 7, 8]);
        assert_eq!(crossover(&m, &t, 1.0, &mut rng).unwrap(), m);
        for _ in 0..10 {
            let tr = crossover(&m, &t, 0.0, &mut rng).unwrap();
            assert_eq!(tr.iter().zip(&m).filter(|(a, b)| a == b).count(), 1);
        }
        assert_eq!(crossover(&t, &t, 0.5, &mut rng).unwrap(), t);
        assert!(crossover(&m, &t[..2], 0.5, &mut rng).is_err());
    }

    #[test]
    fn repair_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(repair(&[5, 1, 3], 6, &mut rng).indices, vec![1, 3, 5]);
        let r = repair(&[3, 3, 3], 6, &mut rng);
        r.validate(6, 3).unwrap();
        assert!(r.indices.contains(&3));
        assert_eq!(repair(&[2, 2, 1, 1], 4, &mut rng).indices, vec![1, 2, 3, 4]);
    }

    #[test]
    fn identical_population_stays_put() {
        let c = DeConfig {
            max_iters: 1,
            ..cfg(5, 2)
        };
        let pop: Vec<Individual> = (0..5).map(|_| Individual::new(vec![3, 7])).collect();
        let f = AdditiveFitness {
            weights: (0..8).map(|i| i as f64).collect(),
        };
        let cache = FitnessCache::default();
        let (best, report) = de_search_from(&c, 8, pop, &f, &cache, Exec::Sequential).unwrap();
        assert_eq!(best.indices, vec![3, 7]);
        assert_eq!(report.evaluations, 1);
    }

    #[test]
    fn cache_returns_stored_value() {
        struct Counter(std::sync::atomic::AtomicUsize);
        impl Fitness for Counter {
            fn evaluate(&self, _: &[usize]) -> Result<f64> {
                Ok(self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst) as f64)
            }
        }
        let f = Counter(0.into());
        let cache = FitnessCache::default();
        let a = cache.get_or_evaluate(&[1, 2], &f).unwrap();
        let b = cache.get_or_evaluate(&[1, 2], &f).unwrap();
        assert_eq!(a, b);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn index_list_round_trip() {
        let ind = Individual::new(vec![4, 1, 9]);
        assert_eq!(ind.to_index_list(), "1\n4\n9\n");
        assert_eq!(Individual::parse_index_list(&ind.to_index_list()).unwrap(), vec![1, 4, 9]);
        assert!(Individual::parse_index_list("1\nx\n").is_err());
    }
}
