//! Retrieval metrics: cosine ranking, CMC / Rank-1 and mAP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{l2_normalize, EncoderParams};
use crate::style::QueryGallerySplit;
use crate::tensor::Tensor;

/// Ranked gallery for every query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    /// Per query, gallery indices by ascending distance; ties by index.
    pub orders: Vec<Vec<usize>>,
    /// Per query, relevance of each gallery index (same identity).
    pub relevant: Vec<Vec<bool>>,
}

impl RankingResult {
    /// Ranks a `queries × gallery` distance matrix.
    pub fn from_distances(dist: &Tensor, query_ids: &[usize], gallery_ids: &[usize]) -> Result<Self> {
        let (q, g) = (dist.rows(), dist.cols());
        if q != query_ids.len() || g != gallery_ids.len() {
            return Err(Error::Shape(format!(
                "distance matrix [{q} x {g}] for {} queries and {} gallery items",
                query_ids.len(),
                gallery_ids.len()
            )));
        }
        if g == 0 {
            return Err(Error::Eval("empty gallery".into()));
        }
        let mut orders = Vec::with_capacity(q);
        let mut relevant = Vec::with_capacity(q);
        for (qi, &qid) in query_ids.iter().enumerate() {
            let row = dist.row(qi);
            let mut order: Vec<usize> = (0..g).collect();
            // stable sort keeps ascending index among equal distances
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
            orders.push(order);
            relevant.push(gallery_ids.iter().map(|&gid| gid == qid).collect());
        }
        Ok(Self { orders, relevant })
    }

    pub fn num_queries(&self) -> usize {
        self.orders.len()
    }

    pub fn gallery_size(&self) -> usize {
        self.orders.first().map_or(0, Vec::len)
    }

    /// 1-based ranks of the relevant items of query `q`, ascending.
    fn hit_ranks(&self, q: usize) -> Vec<usize> {
        self.orders[q]
            .iter()
            .enumerate()
            .filter(|(_, &g)| self.relevant[q][g])
            .map(|(pos, _)| pos + 1)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub rank1: f64,
    pub cmc: Vec<f64>,
    pub num_queries: usize,
}

/// Embeds both sides with the encoder and ranks by cosine distance.
pub fn rank_gallery(encoder: &EncoderParams, split: &QueryGallerySplit) -> Result<RankingResult> {
    if split.gallery.is_empty() {
        return Err(Error::Eval("empty gallery".into()));
    }
    if split.queries.is_empty() {
        return Err(Error::Eval("split has no queries".into()));
    }
    let q = l2_normalize(&encoder.forward(&split.query_features()?)?)?;
    let g = l2_normalize(&encoder.forward(&split.gallery_features()?)?)?;
    let mut dist = q.matmul_t(&g)?;
    dist.values_mut().iter_mut().for_each(|s| *s = 1.0 - *s);
    let qids: Vec<usize> = split.queries.iter().map(|s| s.identity).collect();
    let gids: Vec<usize> = split.gallery.iter().map(|s| s.identity).collect();
    RankingResult::from_distances(&dist, &qids, &gids)
}

/// Mean over queries of uninterpolated average precision.
pub fn compute_map(ranking: &RankingResult) -> Result<f64> {
    if ranking.num_queries() == 0 {
        return Err(Error::Eval("no queries to average".into()));
    }
    let mut total = 0.0;
    for q in 0..ranking.num_queries() {
        let hits = ranking.hit_ranks(q);
        if hits.is_empty() {
            return Err(Error::Eval(format!("query {q} has no relevant gallery item")));
        }
        let ap: f64 = hits
            .iter()
            .enumerate()
            .map(|(k, &r)| (k + 1) as f64 / r as f64)
            .sum::<f64>()
            / hits.len() as f64;
        total += ap;
    }
    Ok(total / ranking.num_queries() as f64)
}

/// `cmc[r]` is the fraction of queries with a relevant item in the top `r + 1`.
pub fn compute_cmc(ranking: &RankingResult, max_rank: usize) -> Result<Vec<f64>> {
    if ranking.num_queries() == 0 {
        return Err(Error::Eval("no queries to rank".into()));
    }
    if max_rank == 0 || max_rank > ranking.gallery_size() {
        return Err(Error::Eval(format!(
            "max rank {max_rank} outside [1, {}]",
            ranking.gallery_size()
        )));
    }
    let mut counts = vec![0usize; max_rank];
    for q in 0..ranking.num_queries() {
        if let Some(&first) = ranking.hit_ranks(q).first() {
            if first <= max_rank {
                counts[first - 1] += 1;
            }
        }
    }
    let n = ranking.num_queries() as f64;
    let mut acc = 0;
    Ok(counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / n
        })
        .collect())
}

/// Rank-1, mAP and a CMC curve up to `max_rank` (clamped to the gallery).
pub fn evaluate(encoder: &EncoderParams, split: &QueryGallerySplit, max_rank: usize) -> Result<MetricsReport> {
    let ranking = rank_gallery(encoder, split)?;
    let cmc = compute_cmc(&ranking, max_rank.clamp(1, ranking.gallery_size()))?;
    Ok(MetricsReport {
        map: compute_map(&ranking)?,
        rank1: cmc[0],
        num_queries: ranking.num_queries(),
        cmc,
    })
}

/// Which domains a trained model is tested on, and which sources it is
/// trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPlan {
    /// Train on every source, test on the held-out target.
    LeaveOneOut,
    /// Train without the last source, test on the held-out target.
    ReducedSources,
    /// Train on every source, test on each source's held-out identities.
    SourceDomains,
}

impl EvalPlan {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalPlan::LeaveOneOut => "leave_one_out",
            EvalPlan::ReducedSources => "reduced_sources",
            EvalPlan::SourceDomains => "source_domains",
        }
    }

    /// Indices of the sources a run under this plan trains on.
    pub fn training_sources(self, num_sources: usize) -> Vec<usize> {
        match self {
            EvalPlan::ReducedSources => (0..num_sources.saturating_sub(1)).collect(),
            _ => (0..num_sources).collect(),
        }
    }
}

impl std::str::FromStr for EvalPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leave_one_out" => Ok(EvalPlan::LeaveOneOut),
            "reduced_sources" => Ok(EvalPlan::ReducedSources),
            "source_domains" => Ok(EvalPlan::SourceDomains),
            other => Err(Error::Config(format!("unknown evaluation plan {other:?}"))),
        }
    }
}

/// A test split tagged with its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSplit {
    pub domain_id: u32,
    pub split: QueryGallerySplit,
}

/// Test data a plan may draw from.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalData {
    pub target: DomainSplit,
    /// Held-out test identities of every source domain, in source order.
    pub sources: Vec<DomainSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub domain_id: u32,
    pub report: MetricsReport,
}

pub fn evaluate_plan(
    encoder: &EncoderParams,
    plan: EvalPlan,
    data: &EvalData,
    max_rank: usize,
) -> Result<Vec<DomainReport>> {
    let splits: Vec<&DomainSplit> = match plan {
        EvalPlan::LeaveOneOut | EvalPlan::ReducedSources => vec![&data.target],
        EvalPlan::SourceDomains => {
            if data.sources.is_empty() {
                return Err(Error::Config("source_domains plan without sources".into()));
            }
            data.sources.iter().collect()
        }
    };
    splits
        .into_iter()
        .map(|ds| {
            Ok(DomainReport {
                domain_id: ds.domain_id,
                report: evaluate(encoder, &ds.split, max_rank)?,
            })
        })
        .collect()
}
