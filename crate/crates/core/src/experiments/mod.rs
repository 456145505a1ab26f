//! The four benchmark models, their data, and exact references.

mod bus;
mod exact;
mod models;
mod movielens;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Assignment, Dataset, ModelGraph};
use crate::proposals::ProposalGraph;

pub use crate::estimator::predictive_log_likelihood;
pub use bus::{load_bus_csv, parse_bus_csv, split_bus, BusRecord, BUS_HEADER};
pub use exact::{enumerate_evidence, exact_log_evidence};
pub use models::{
    build_bus, build_movielens, build_ts_multi, build_ts_single, BOROUGH_VARIANCE_WEIGHTS, BUS_TOTAL_COUNT,
    PSI_WEIGHTS, WEIGHT_VARIANCE_WEIGHTS,
};
pub use movielens::{
    load_movielens_ratings, parse_item_genres, parse_ratings, split_ratings, Rating, SplitData, GENRE_FEATURES,
};

/// Films drawn from when synthesizing MovieLens-style data.
const SYNTHETIC_FILMS: usize = 1682;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    MovieLens,
    Bus,
    TsSingle,
    TsMulti,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [Self::MovieLens, Self::Bus, Self::TsSingle, Self::TsMulti];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MovieLens => "movielens",
            Self::Bus => "bus",
            Self::TsSingle => "ts-single",
            Self::TsMulti => "ts-multi",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Lookup(format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Latents and data drawn from the prior with this seed.
    Synthetic(u64),
    /// A `u.data` ratings file or a bus CSV.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub users: usize,
    pub films_per_user: usize,
    pub feature_dim: usize,
    pub years: usize,
    pub boroughs: usize,
    pub ids: usize,
    pub companies: usize,
    pub journeys: usize,
    /// Timeseries length.
    pub n: usize,
    pub tau: f64,
    pub source: DataSource,
    /// Optional `u.item` file supplying genre features.
    pub items: Option<PathBuf>,
    /// Seeds user selection and held-out splits of file data.
    pub split_seed: u64,
}

impl ExperimentSpec {
    pub fn new(id: ExperimentId) -> Self {
        Self {
            id,
            users: 50,
            films_per_user: 5,
            feature_dim: GENRE_FEATURES,
            years: 3,
            boroughs: 3,
            ids: 30,
            companies: 10,
            journeys: 5,
            n: 30,
            tau: 10.0,
            source: DataSource::Synthetic(0),
            items: None,
            split_seed: 0,
        }
    }

    pub fn build(&self) -> Result<Experiment> {
        let (model, proposal) = match self.id {
            ExperimentId::MovieLens => build_movielens(self.users, self.films_per_user, self.feature_dim)?,
            ExperimentId::Bus => build_bus(self.years, self.boroughs, self.ids, self.companies, self.journeys)?,
            ExperimentId::TsSingle => build_ts_single(self.n)?,
            ExperimentId::TsMulti => build_ts_multi(self.n, self.tau)?,
        };
        let (truth, split) = match &self.source {
            DataSource::Synthetic(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let (z, split) = self.synthesize(&model, &mut rng)?;
                (Some(z), split)
            }
            DataSource::File(path) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.split_seed);
                let split = match self.id {
                    ExperimentId::MovieLens => {
                        let ratings = parse_ratings(&std::fs::read_to_string(path)?)?;
                        let genres = match &self.items {
                            Some(p) => Some(parse_item_genres(&std::fs::read_to_string(p)?)?),
                            None => None,
                        };
                        split_ratings(
                            &ratings,
                            genres.as_ref(),
                            self.users,
                            self.films_per_user,
                            self.feature_dim,
                            &mut rng,
                        )?
                    }
                    ExperimentId::Bus => {
                        load_bus_csv(path, self.years, self.boroughs, self.ids, self.companies, self.journeys)?
                    }
                    id => return Err(Error::Capability(format!("`{id}` has no file format"))),
                };
                (None, split)
            }
        };
        model.check_dataset(&split.train)?;
        model.check_dataset(&split.test)?;
        Ok(Experiment {
            id: self.id,
            model,
            proposal,
            train: split.train,
            test: split.test,
            truth,
        })
    }

    /// Draws ground-truth latents, then training and held-out data from them.
    /// The timeseries models have no held-out set.
    fn synthesize(&self, model: &ModelGraph, rng: &mut ChaCha8Rng) -> Result<(Assignment, SplitData)> {
        let z = model.sample_latents(rng)?;
        let split = match self.id {
            ExperimentId::MovieLens => {
                let pool: Vec<Vec<f64>> = (0..SYNTHETIC_FILMS.max(2 * self.films_per_user))
                    .map(|_| (0..self.feature_dim).map(|_| rng.sample(StandardNormal)).collect())
                    .collect();
                let mut train = Vec::new();
                let mut test = Vec::new();
                for _ in 0..self.users {
                    let films = index::sample(rng, pool.len(), 2 * self.films_per_user);
                    for (j, f) in films.iter().enumerate() {
                        let dst = if j < self.films_per_user { &mut train } else { &mut test };
                        dst.extend_from_slice(&pool[f]);
                    }
                }
                SplitData {
                    train: model.sample_data(&z, &[vec![train]], rng)?,
                    test: model.sample_data(&z, &[vec![test]], rng)?,
                }
            }
            ExperimentId::Bus => {
                let n = self.years * self.boroughs * self.ids;
                let covariates = |rng: &mut ChaCha8Rng| {
                    let mut co = vec![0.0; n * self.companies];
                    let mut jo = vec![0.0; n * self.journeys];
                    for m in 0..n {
                        co[m * self.companies + rng.random_range(0..self.companies)] = 1.0;
                        jo[m * self.journeys + rng.random_range(0..self.journeys)] = 1.0;
                    }
                    vec![vec![co, jo]]
                };
                let train_cov = covariates(rng);
                let test_cov = covariates(rng);
                SplitData {
                    train: model.sample_data(&z, &train_cov, rng)?,
                    test: model.sample_data(&z, &test_cov, rng)?,
                }
            }
            ExperimentId::TsSingle | ExperimentId::TsMulti => SplitData {
                train: model.sample_data(&z, &[], rng)?,
                test: Dataset::empty(),
            },
        };
        Ok((z, split))
    }
}

/// A model, its proposal and the data it is fit to.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub id: ExperimentId,
    pub model: ModelGraph,
    pub proposal: ProposalGraph,
    pub train: Dataset,
    pub test: Dataset,
    /// Latents behind synthetic data.
    pub truth: Option<Assignment>,
}
