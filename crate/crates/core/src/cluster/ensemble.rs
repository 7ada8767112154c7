//! Clustered federated training and ensemble selection.
//!
//! Organizations are clustered on their locations, each cluster trains its
//! own federated global model, and the final predictor averages the
//! predictions of the best-performing model subset on a validation slice.
//! The objective literally sums model symbols; averaging parameter vectors
//! of independently trained networks is meaningless across clusters, so
//! the ensemble averages predictions instead.

use super::{constrained_kmeans, ClusterConfig, ClusterResult};
use crate::data::{metrics, MetricsReport, WindowedSample, DEFAULT_MAPE_FLOOR};
use crate::error::{Error, Result};
use crate::exec;
use crate::fed::{run_federated_training, FederationConfig, Organization, RoundReport};
use crate::gru::{predict_batch, GruNetwork};

/// Largest model count for which selection enumerates all subsets.
pub const EXHAUSTIVE_LIMIT: usize = 12;

/// One trained per-cluster global model.
#[derive(Debug, Clone)]
pub struct GlobalModel {
    pub cluster_id: usize,
    pub net: GruNetwork,
    pub validation: MetricsReport,
}

/// The set Omega_k: one global model per non-empty cluster.
#[derive(Debug, Clone)]
pub struct GlobalModelSet {
    pub models: Vec<GlobalModel>,
}

/// Mean-of-member-predictions ensemble.
#[derive(Debug, Clone)]
pub struct EnsemblePredictor {
    pub members: Vec<GruNetwork>,
}

impl EnsemblePredictor {
    pub fn predict(&self, samples: &[WindowedSample]) -> Result<Vec<f64>> {
        if self.members.is_empty() {
            return Err(Error::EmptyInput("ensemble has no members".to_string()));
        }
        let per_model: Vec<Vec<f64>> = self
            .members
            .iter()
            .map(|net| predict_batch(net, samples))
            .collect::<Result<_>>()?;
        Ok(mean_of(&per_model, samples.len()))
    }
}

/// Prediction averaging in a fixed order: members ascending, then divide.
/// Selection, the selection oracle and the final predictor all share this
/// arithmetic so their scores are comparable to the last bit.
fn mean_of(per_model: &[Vec<f64>], n: usize) -> Vec<f64> {
    let k = per_model.len() as f64;
    (0..n)
        .map(|j| {
            let mut s = 0.0;
            for preds in per_model {
                s += preds[j];
            }
            s / k
        })
        .collect()
}

fn subset_mae(per_model: &[Vec<f64>], members: &[usize], targets: &[f64]) -> f64 {
    let mut abs_sum = 0.0;
    for (j, &t) in targets.iter().enumerate() {
        let mut s = 0.0;
        for &i in members {
            s += per_model[i][j];
        }
        let mean = s / members.len() as f64;
        abs_sum += (mean - t).abs();
    }
    abs_sum / targets.len() as f64
}

/// How the subset was chosen and what was evaluated along the way.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    /// Indices into the model set, ascending.
    pub chosen: Vec<usize>,
    /// Cluster ids of the chosen models, ascending.
    pub chosen_clusters: Vec<usize>,
    pub validation_mae: f64,
    /// Every subset scored, in evaluation order.
    pub evaluated: Vec<(Vec<usize>, f64)>,
    /// True when the model count exceeded the exhaustive limit and greedy
    /// forward selection was used instead.
    pub greedy: bool,
}

fn prefer(candidate: (&[usize], f64), incumbent: (&[usize], f64)) -> bool {
    let (cs, cm) = candidate;
    let (is_, im) = incumbent;
    cm < im || (cm == im && (cs.len() < is_.len() || (cs.len() == is_.len() && cs < is_)))
}

/// Picks the model subset whose averaged predictions minimize validation
/// MAE. Exhaustive for up to [`EXHAUSTIVE_LIMIT`] models; greedy forward
/// selection beyond that, flagged in the outcome.
pub fn ensemble_select(
    models: &GlobalModelSet,
    validation: &[WindowedSample],
) -> Result<(SelectionOutcome, EnsemblePredictor)> {
    let k = models.models.len();
    if k == 0 {
        return Err(Error::EmptyInput("no models to select from".to_string()));
    }
    if validation.is_empty() {
        return Err(Error::EmptyInput(
            "selection needs validation samples".to_string(),
        ));
    }
    let targets: Vec<f64> = validation.iter().map(|s| s.y).collect();
    let per_model: Vec<Vec<f64>> = models
        .models
        .iter()
        .map(|m| predict_batch(&m.net, validation))
        .collect::<Result<_>>()?;

    let mut evaluated: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut chosen: Vec<usize> = Vec::new();
    let mut best_mae = f64::INFINITY;
    let greedy = k > EXHAUSTIVE_LIMIT;

    if !greedy {
        for mask in 1u32..(1u32 << k) {
            let members: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
            let mae = subset_mae(&per_model, &members, &targets);
            if chosen.is_empty() || prefer((&members, mae), (&chosen, best_mae)) {
                best_mae = mae;
                chosen = members.clone();
            }
            evaluated.push((members, mae));
        }
    } else {
        loop {
            let mut round_best: Option<(Vec<usize>, f64)> = None;
            for cand in 0..k {
                if chosen.contains(&cand) {
                    continue;
                }
                let mut members = chosen.clone();
                members.push(cand);
                members.sort_unstable();
                let mae = subset_mae(&per_model, &members, &targets);
                evaluated.push((members.clone(), mae));
                let take = match &round_best {
                    None => true,
                    Some((s, m)) => prefer((&members, mae), (s, *m)),
                };
                if take {
                    round_best = Some((members, mae));
                }
            }
            match round_best {
                Some((members, mae)) if mae < best_mae => {
                    chosen = members;
                    best_mae = mae;
                }
                _ => break,
            }
        }
    }

    let predictor = EnsemblePredictor {
        members: chosen
            .iter()
            .map(|&i| models.models[i].net.clone())
            .collect(),
    };
    let chosen_clusters = chosen
        .iter()
        .map(|&i| models.models[i].cluster_id)
        .collect();
    Ok((
        SelectionOutcome {
            chosen,
            chosen_clusters,
            validation_mae: best_mae,
            evaluated,
            greedy,
        },
        predictor,
    ))
}

/// Convenience: averaged predictions of an explicit model list.
pub fn ensemble_predict(members: &[GruNetwork], samples: &[WindowedSample]) -> Result<Vec<f64>> {
    EnsemblePredictor {
        members: members.to_vec(),
    }
    .predict(samples)
}

/// Equirectangular projection of (lat, lon) degrees: longitude scaled by
/// the cosine of the mean latitude. Euclidean distance on raw degrees
/// would overweight longitude away from the equator.
pub fn project_locations(locations: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let mean_lat = locations.iter().map(|l| l.0).sum::<f64>() / locations.len().max(1) as f64;
    let scale = (mean_lat.to_radians()).cos();
    locations
        .iter()
        .map(|&(lat, lon)| vec![lat, lon * scale])
        .collect()
}

fn unproject(center: &[f64], scale: f64) -> (f64, f64) {
    (center[0], center[1] / scale)
}

/// The last fifth of an organization's training windows, in time order.
/// These windows stay in the training set; they are reserved only as the
/// scoring slice for ensemble selection, which keeps clustered and plain
/// training trajectories identical for identical federations.
pub fn validation_split(samples: &[WindowedSample]) -> &[WindowedSample] {
    &samples[samples.len() * 4 / 5..]
}

/// Per-organization clustering record for reports.
#[derive(Debug, Clone)]
pub struct OrgClusterRecord {
    pub org_id: u64,
    pub lat: f64,
    pub lon: f64,
    pub cluster_id: usize,
    /// Whether this organization's cluster model made the ensemble.
    pub in_selected: bool,
}

/// One cluster's federated training run.
#[derive(Debug, Clone)]
pub struct ClusterTraining {
    pub cluster_id: usize,
    pub org_ids: Vec<u64>,
    pub reports: Vec<RoundReport>,
    pub validation: MetricsReport,
}

/// Everything the clustered pipeline produces.
#[derive(Debug, Clone)]
pub struct ClusteredOutput {
    pub clustering: ClusterResult,
    pub centers_latlon: Vec<(f64, f64)>,
    pub per_org: Vec<OrgClusterRecord>,
    pub trainings: Vec<ClusterTraining>,
    pub models: GlobalModelSet,
    pub selection: SelectionOutcome,
    pub ensemble: EnsemblePredictor,
    pub test_metrics: MetricsReport,
}

/// Clusters organizations by location, trains one federation per
/// non-empty cluster (global org ids and the shared seed keep a k = 1
/// clustering identical to plain federated training), selects the best
/// model subset on pooled validation windows, and scores the ensemble on
/// the test set.
pub fn run_clustered_fedgru(
    orgs: &[Organization],
    test: &[WindowedSample],
    cluster_cfg: &ClusterConfig,
    fed_cfg: &FederationConfig,
    init_net: GruNetwork,
) -> Result<ClusteredOutput> {
    if orgs.is_empty() {
        return Err(Error::EmptyInput(
            "clustered training needs organizations".to_string(),
        ));
    }
    if test.is_empty() {
        return Err(Error::EmptyInput(
            "clustered training needs a test set".to_string(),
        ));
    }

    let locations: Vec<(f64, f64)> = orgs.iter().map(|o| o.location).collect();
    let points = project_locations(&locations);
    let mean_lat = locations.iter().map(|l| l.0).sum::<f64>() / locations.len() as f64;
    let scale = mean_lat.to_radians().cos();

    let clustering = constrained_kmeans(&points, cluster_cfg)?;
    let labels = clustering.assignment.labels();

    // Member org indices per cluster, ascending org order.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cluster_cfg.k];
    for (idx, &label) in labels.iter().enumerate() {
        members[label].push(idx);
    }

    // Pooled validation slice: ascending org id, each org's last fifth.
    let mut by_id: Vec<usize> = (0..orgs.len()).collect();
    by_id.sort_by_key(|&i| orgs[i].org_id);
    let validation: Vec<WindowedSample> = by_id
        .iter()
        .flat_map(|&i| validation_split(&orgs[i].samples).iter().cloned())
        .collect();
    if validation.is_empty() {
        return Err(Error::EmptyInput(
            "organizations hold too few samples to form a validation slice".to_string(),
        ));
    }

    let non_empty: Vec<usize> = (0..cluster_cfg.k)
        .filter(|&h| !members[h].is_empty())
        .collect();
    let trained = exec::map_collect(&non_empty, |&h| -> Result<(usize, _, MetricsReport)> {
        let subset: Vec<Organization> = members[h].iter().map(|&i| orgs[i].clone()).collect();
        let mut sub_cfg = fed_cfg.clone();
        sub_cfg.n_orgs = subset.len();
        let output = run_federated_training(&sub_cfg, &subset, init_net.clone(), Some(test))?;
        let preds = predict_batch(&output.net, &validation)?;
        let targets: Vec<f64> = validation.iter().map(|s| s.y).collect();
        let report = metrics(&targets, &preds, DEFAULT_MAPE_FLOOR)?;
        Ok((h, output, report))
    });

    let mut models = Vec::with_capacity(non_empty.len());
    let mut trainings = Vec::with_capacity(non_empty.len());
    for result in trained {
        let (h, output, validation_report) = result?;
        models.push(GlobalModel {
            cluster_id: h,
            net: output.net.clone(),
            validation: validation_report.clone(),
        });
        trainings.push(ClusterTraining {
            cluster_id: h,
            org_ids: members[h].iter().map(|&i| orgs[i].org_id).collect(),
            reports: output.reports,
            validation: validation_report,
        });
    }
    let models = GlobalModelSet { models };

    let (selection, ensemble) = ensemble_select(&models, &validation)?;

    let preds = ensemble.predict(test)?;
    let targets: Vec<f64> = test.iter().map(|s| s.y).collect();
    let test_metrics = metrics(&targets, &preds, DEFAULT_MAPE_FLOOR)?;

    let per_org = orgs
        .iter()
        .enumerate()
        .map(|(idx, o)| OrgClusterRecord {
            org_id: o.org_id,
            lat: o.location.0,
            lon: o.location.1,
            cluster_id: labels[idx],
            in_selected: selection.chosen_clusters.contains(&labels[idx]),
        })
        .collect();

    let centers_latlon = clustering
        .centers
        .iter()
        .map(|c| unproject(c, scale))
        .collect();

    Ok(ClusteredOutput {
        clustering,
        centers_latlon,
        per_org,
        trainings,
        models,
        selection,
        ensemble,
        test_metrics,
    })
}
