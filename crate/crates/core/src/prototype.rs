//! Prototype search: a deletion-only genetic algorithm that shrinks concept
//! members while their channel projection stays close to the concept
//! centroid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concepts::{cosine, ConceptCluster};
use crate::graph::{Dataset, Graph};
use crate::io::GraphRecord;
use crate::model::Megan;
use crate::{Error, Result};

pub const PENALTY: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub epochs: usize,
    pub population_cap: usize,
    pub node_deletion: f64,
    pub edge_deletion: f64,
    pub tournament_size: usize,
    pub elite_fraction: f64,
    /// Minimum cosine similarity to the centroid for a feasible candidate.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            population_cap: 100,
            node_deletion: 0.5,
            edge_deletion: 0.3,
            tournament_size: 3,
            elite_fraction: 0.1,
            epsilon: 0.9,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn check(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.node_deletion) || !unit(self.edge_deletion) {
            return Err(Error::Config("deletion probabilities must lie in [0, 1]".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config("similarity floor must lie in (0, 1)".into()));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 0.5) {
            return Err(Error::Config("elite fraction must lie in (0, 0.5]".into()));
        }
        if self.tournament_size < 1 || self.population_cap < 1 {
            return Err(Error::Config("tournament size and population cap must be positive".into()));
        }
        Ok(())
    }
}

/// Node count, plus [`PENALTY`] when the similarity floor is missed.
pub fn fitness(node_count: usize, similarity: f64, epsilon: f64) -> f64 {
    let n = node_count as f64;
    if similarity >= epsilon {
        n
    } else {
        n + PENALTY
    }
}

#[derive(Clone, Debug)]
pub struct Individual {
    pub graph: Graph,
    pub embedding: Vec<f64>,
    pub similarity: f64,
    pub fitness: f64,
}

impl Individual {
    pub fn feasible(&self) -> bool {
        self.fitness < PENALTY
    }
}

/// Fixed context of one search.
pub struct Objective<'a> {
    pub model: &'a Megan,
    pub channel: usize,
    pub centroid: &'a [f64],
    pub epsilon: f64,
}

impl Objective<'_> {
    /// Embeds `graph` as a whole (every node active in the channel).
    pub fn score(&self, graph: Graph) -> Result<Individual> {
        let embedding = self.model.embed_whole(&graph, self.channel)?;
        let similarity = cosine(&embedding, self.centroid);
        Ok(Individual {
            fitness: fitness(graph.node_count, similarity, self.epsilon),
            graph,
            embedding,
            similarity,
        })
    }
}

/// Feasibility first, then size among feasible candidates and similarity
/// among infeasible ones. `Less` means `a` is better.
pub fn compare(a: &Individual, b: &Individual) -> std::cmp::Ordering {
    match (a.feasible(), b.feasible()) {
        (true, false) => std::cmp::Ordering::Less,
        (false, true) => std::cmp::Ordering::Greater,
        (true, true) => a
            .graph
            .node_count
            .cmp(&b.graph.node_count)
            .then(b.similarity.total_cmp(&a.similarity)),
        (false, false) => b
            .similarity
            .total_cmp(&a.similarity)
            .then(a.graph.node_count.cmp(&b.graph.node_count)),
    }
}

/// Member graphs nearest the centroid, capped at the population size.
pub fn init_population(cluster: &ConceptCluster, dataset: &Dataset, objective: &Objective, config: &GaConfig) -> Result<Vec<Individual>> {
    cluster
        .members
        .iter()
        .take(config.population_cap)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|m| objective.score(dataset.items[m.item].graph.clone()))
        .collect()
}

/// Deletes a node and/or an undirected edge, keeps the largest component
/// and re-embeds. Returns the parent unchanged when nothing would remain.
pub fn mutate(parent: &Individual, objective: &Objective, rng: &mut impl Rng, config: &GaConfig) -> Result<Individual> {
    if parent.graph.node_count < 2 {
        return Ok(parent.clone());
    }
    let mut graph = parent.graph.clone();
    let mut changed = false;
    if rng.random_bool(config.node_deletion) {
        let n = rng.random_range(0..graph.node_count);
        graph = graph.without_node(n);
        changed = true;
    }
    if rng.random_bool(config.edge_deletion) {
        let pairs = graph.undirected_edge_indices();
        if !pairs.is_empty() {
            let (a, b) = graph.edges[pairs[rng.random_range(0..pairs.len())]];
            graph = graph.without_edge(a, b);
            changed = true;
        }
    }
    if !changed {
        return Ok(parent.clone());
    }
    if !graph.is_connected() {
        graph = graph.largest_component();
    }
    if graph.node_count == 0 {
        return Ok(parent.clone());
    }
    objective.score(graph)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub graph: GraphRecord,
    pub similarity: f64,
    pub feasible: bool,
    pub epochs: usize,
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub best: Individual,
    /// Fitness of the best individual after each epoch.
    pub history: Vec<f64>,
}

impl Evolution {
    pub fn prototype(&self) -> Prototype {
        Prototype {
            graph: GraphRecord::from_graph(&self.best.graph),
            similarity: self.best.similarity,
            feasible: self.best.feasible(),
            epochs: self.history.len(),
        }
    }
}

fn tournament<'a>(population: &'a [Individual], size: usize, rng: &mut impl Rng) -> &'a Individual {
    let mut best = &population[rng.random_range(0..population.len())];
    for _ in 1..size {
        let other = &population[rng.random_range(0..population.len())];
        if compare(other, best).is_lt() {
            best = other;
        }
    }
    best
}

/// Runs the search from `population`.
pub fn evolve_population(mut population: Vec<Individual>, objective: &Objective, config: &GaConfig) -> Result<Evolution> {
    config.check()?;
    if population.is_empty() {
        return Err(Error::Config("prototype search needs a non-empty population".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = population.len();
    let elites = ((config.elite_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut history = Vec::with_capacity(config.epochs);
    population.sort_by(compare);
    for _ in 0..config.epochs {
        let parents: Vec<(Individual, u64)> = (elites..n)
            .map(|_| (tournament(&population, config.tournament_size, &mut rng).clone(), rng.random()))
            .collect();
        let children = parents
            .par_iter()
            .map(|(p, seed)| mutate(p, objective, &mut ChaCha8Rng::seed_from_u64(*seed), config))
            .collect::<Result<Vec<_>>>()?;
        population.truncate(elites);
        population.extend(children);
        population.sort_by(compare);
        history.push(population[0].fitness);
    }
    Ok(Evolution {
        best: population.swap_remove(0),
        history,
    })
}

/// Prototype search for one concept.
pub fn evolve(cluster: &ConceptCluster, model: &Megan, dataset: &Dataset, config: &GaConfig) -> Result<Evolution> {
    let objective = Objective {
        model,
        channel: cluster.channel,
        centroid: &cluster.centroid,
        epsilon: config.epsilon,
    };
    let population = init_population(cluster, dataset, &objective, config)?;
    evolve_population(population, &objective, config)
}
