//! Ranking metrics, the confusion matrix and input-gradient saliency.

use num_traits::{FromPrimitive, Num};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::image::GrayMap;
use crate::model::{bind_pairs, PairTensors, PreparedClip, ReharModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Indices sorted by descending score; equal scores keep index order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn check_ranking_input(scores: &[f64], positives: &[bool]) -> Result<usize> {
    if scores.len() != positives.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} ground-truth flags",
            scores.len(),
            positives.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("ranking score {s}")));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(Error::UndefinedAp);
    }
    Ok(n_pos)
}

/// `(recall, precision)` after each rank of the score ordering.
pub fn precision_recall_curve(scores: &[f64], positives: &[bool]) -> Result<Vec<(f64, f64)>> {
    let n_pos = check_ranking_input(scores, positives)?;
    let mut tp = 0usize;
    Ok(ranking(scores)
        .into_iter()
        .enumerate()
        .map(|(k, i)| {
            tp += usize::from(positives[i]);
            (tp as f64 / n_pos as f64, tp as f64 / (k + 1) as f64)
        })
        .collect())
}

/// Area under the precision/recall staircase: the sum over positive ranks
/// `k` of `precision(k) · 1/P`.
///
/// `S` is the accumulation type, so the value can be computed exactly with
/// rationals as well as in floating point.
pub fn average_precision<S>(scores: &[f64], positives: &[bool]) -> Result<S>
where
    S: Copy + Num + FromPrimitive,
{
    let n_pos = check_ranking_input(scores, positives)?;
    let count = |n: usize| S::from_usize(n).expect("count fits the accumulation type");
    let mut tp = 0usize;
    let mut sum = S::zero();
    for (k, i) in ranking(scores).into_iter().enumerate() {
        if positives[i] {
            tp += 1;
            sum = sum + count(tp) / count(k + 1);
        }
    }
    Ok(sum / count(n_pos))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapReport {
    /// `None` for categories without a positive example.
    pub per_category: Vec<Option<f64>>,
    pub mean: f64,
}

impl MapReport {
    /// Header with one column per category plus `Mean`, then one row of
    /// values (`nan` for undefined categories).
    pub fn to_tsv(&self, names: &[String]) -> String {
        let mut header: Vec<String> = names.to_vec();
        header.push("Mean".into());
        let mut values: Vec<String> = self
            .per_category
            .iter()
            .map(|ap| ap.map_or("nan".to_string(), |v| format!("{v:.6}")))
            .collect();
        values.push(format!("{:.6}", self.mean));
        format!("{}\n{}\n", header.join("\t"), values.join("\t"))
    }
}

/// Per-category AP with each clip's probability for that category as its
/// score; the mean skips categories whose AP is undefined.
pub fn mean_average_precision(
    scores: &[Vec<f64>],
    labels: &[usize],
    num_categories: usize,
) -> Result<MapReport> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} score rows but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(row) = scores.iter().find(|r| r.len() != num_categories) {
        return Err(Error::Shape(format!(
            "score row has {} entries, expected {num_categories}",
            row.len()
        )));
    }
    let mut per_category = Vec::with_capacity(num_categories);
    for c in 0..num_categories {
        let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match average_precision::<f64>(&s, &pos) {
            Ok(ap) => per_category.push(Some(ap)),
            Err(Error::UndefinedAp) => {
                log::warn!("category {c} has no positive example; AP undefined and skipped");
                per_category.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = per_category.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::UndefinedAp);
    }
    let mean = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(MapReport { per_category, mean })
}

/// Counts with rows indexed by the predicted category and columns by the
/// actual category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(predicted: &[usize], actual: &[usize], num_categories: usize) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::InvalidArgument(format!(
                "{} predictions but {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let mut counts = vec![vec![0; num_categories]; num_categories];
        for (&p, &a) in predicted.iter().zip(actual) {
            if p >= num_categories || a >= num_categories {
                return Err(Error::InvalidArgument(format!(
                    "label pair ({p}, {a}) out of range for {num_categories} categories"
                )));
            }
            counts[p][a] += 1;
        }
        Ok(Self { counts })
    }

    pub fn num_categories(&self) -> usize {
        self.counts.len()
    }

    /// Clips predicted as `predicted` whose label is `actual`.
    pub fn get(&self, predicted: usize, actual: usize) -> usize {
        self.counts[predicted][actual]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Each row divided by its sum, as percentages; empty rows stay zero.
    pub fn row_percentages(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: usize = row.iter().sum();
                row.iter()
                    .map(|&c| {
                        if s == 0 {
                            0.0
                        } else {
                            100.0 * c as f64 / s as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Header line naming the actual categories, then one line per
    /// predicted category.
    pub fn to_tsv(&self, names: &[String]) -> String {
        let mut out = format!("predicted\\actual\t{}\n", names.join("\t"));
        for (name, row) in names.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!("{name}\t{}\n", cells.join("\t")));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub predicted: Vec<usize>,
    pub accuracy: f64,
    pub map: MapReport,
    pub confusion: ConfusionMatrix,
}

impl Evaluation {
    /// Accuracy restricted to clips whose label is in `categories`.
    pub fn accuracy_on(&self, categories: &[usize]) -> f64 {
        let (mut n, mut correct) = (0usize, 0usize);
        for (&l, &p) in self.labels.iter().zip(&self.predicted) {
            if categories.contains(&l) {
                n += 1;
                correct += usize::from(l == p);
            }
        }
        correct as f64 / n.max(1) as f64
    }
}

/// Runs the model over every clip and scores the predictions.
pub fn evaluate<T: Scalar>(model: &ReharModel<T>, clips: &[PreparedClip<T>]) -> Result<Evaluation> {
    let c = model.config.num_categories;
    let mut probs = Vec::with_capacity(clips.len());
    for clip in clips {
        if clip.label >= c {
            return Err(Error::InvalidArgument(format!(
                "clip {} has label {} but the model knows {c} categories",
                clip.id, clip.label
            )));
        }
        let p = model.predict(&clip.pairs)?.probs;
        probs.push(
            p.data()
                .iter()
                .map(|v| v.to_f64_lossy())
                .collect::<Vec<f64>>(),
        );
    }
    let labels: Vec<usize> = clips.iter().map(|c| c.label).collect();
    let predicted: Vec<usize> = probs
        .iter()
        .map(|p| Tensor::vector(p.clone()).argmax())
        .collect();
    let correct = predicted
        .iter()
        .zip(&labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(Evaluation {
        map: mean_average_precision(&probs, &labels, c)?,
        confusion: ConfusionMatrix::new(&predicted, &labels, c)?,
        accuracy: correct as f64 / clips.len().max(1) as f64,
        probs,
        labels,
        predicted,
    })
}

/// Which input stream to blank out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Frame,
    Flow,
}

/// Copy of `clips` with every image of one stream replaced by zeros.
pub fn zero_stream<T: Scalar>(clips: &[PreparedClip<T>], stream: Stream) -> Vec<PreparedClip<T>> {
    clips
        .iter()
        .map(|c| PreparedClip {
            id: c.id.clone(),
            label: c.label,
            pairs: c
                .pairs
                .iter()
                .map(|p| match stream {
                    Stream::Frame => PairTensors {
                        frame: Tensor::zeros(p.frame.shape()),
                        flow: p.flow.clone(),
                    },
                    Stream::Flow => PairTensors {
                        frame: p.frame.clone(),
                        flow: Tensor::zeros(p.flow.shape()),
                    },
                })
                .collect(),
        })
        .collect()
}

/// One `H×W` map of `max_c |∂logit/∂pixel|`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyResult {
    pub frame_maps: Vec<SaliencyMap>,
    pub flow_maps: Vec<SaliencyMap>,
    /// The pre-softmax value that was differentiated.
    pub logit: f64,
}

impl SaliencyResult {
    /// Largest entry over every map of the clip.
    pub fn max_value(&self) -> f64 {
        self.frame_maps
            .iter()
            .chain(&self.flow_maps)
            .flat_map(|m| m.data.iter().copied())
            .fold(0.0, f64::max)
    }

    /// 8-bit renderings scaled by the clip-wide maximum, in the order
    /// frame 0, flow 0, frame 1, flow 1, ... An all-zero result renders
    /// black.
    pub fn to_gray_maps(&self) -> Vec<GrayMap> {
        let max = self.max_value();
        let render = |m: &SaliencyMap| GrayMap {
            width: m.width,
            height: m.height,
            data: m
                .data
                .iter()
                .map(|&v| {
                    if max > 0.0 {
                        (255.0 * v / max).round() as u8
                    } else {
                        0
                    }
                })
                .collect(),
        };
        self.frame_maps
            .iter()
            .zip(&self.flow_maps)
            .flat_map(|(f, o)| [render(f), render(o)])
            .collect()
    }
}

fn channel_max_abs<T: Scalar>(grad: &Tensor<T>) -> SaliencyMap {
    let (h, w, c) = (grad.shape()[0], grad.shape()[1], grad.shape()[2]);
    SaliencyMap {
        width: w,
        height: h,
        data: grad
            .data()
            .chunks_exact(c)
            .map(|px| {
                px.iter()
                    .map(|v| v.to_f64_lossy().abs())
                    .fold(0.0, f64::max)
            })
            .collect(),
    }
}

/// Gradient of the pre-softmax clip logit for `category` with respect to
/// every input pixel of every pair.
pub fn input_saliency<T: Scalar>(
    model: &ReharModel<T>,
    pairs: &[PairTensors<T>],
    category: usize,
) -> Result<SaliencyResult> {
    if category >= model.config.num_categories {
        return Err(Error::InvalidArgument(format!(
            "category {category} out of range for {} categories",
            model.config.num_categories
        )));
    }
    let mut g = Graph::new();
    let nodes = model.bind(&mut g);
    let inputs = bind_pairs(&mut g, pairs, true);
    let out = nodes.forward(&mut g, &inputs, None, T::zero())?;
    let unit = g.slice(out.final_logits, category, 1)?;
    let logit = g.sum(unit);
    let grads = g.backward(logit)?;
    let mut frame_maps = Vec::with_capacity(pairs.len());
    let mut flow_maps = Vec::with_capacity(pairs.len());
    for (&(f, o), p) in inputs.iter().zip(pairs) {
        frame_maps.push(channel_max_abs(&grads.get_or_zeros(f, p.frame.shape())));
        flow_maps.push(channel_max_abs(&grads.get_or_zeros(o, p.flow.shape())));
    }
    Ok(SaliencyResult {
        frame_maps,
        flow_maps,
        logit: g.value(logit).data()[0].to_f64_lossy(),
    })
}
