//! Threshold labeling of pseudo scores into the positive bag A and the
//! negative bag N.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SegmentId;
use crate::pseudo_scoring::PseudoScore;

fn check_unit(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange { what, value })
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange { what: "tau", value: tau })
    }
}

/// 1 iff both scores strictly exceed `tau`.
pub fn assign_label(y_s_hat: f64, y_d_hat: f64, tau: f64) -> Result<u8> {
    check_unit("anomaly score", y_s_hat)?;
    check_unit("dynamicity score", y_d_hat)?;
    check_tau(tau)?;
    Ok(u8::from(y_s_hat > tau && y_d_hat > tau))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bags {
    pub positive: BTreeSet<SegmentId>,
    pub negative: BTreeSet<SegmentId>,
}

impl Bags {
    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label_of(&self, id: SegmentId) -> Option<u8> {
        if self.positive.contains(&id) {
            Some(1)
        } else if self.negative.contains(&id) {
            Some(0)
        } else {
            None
        }
    }

    pub fn is_disjoint(&self) -> bool {
        self.positive.is_disjoint(&self.negative)
    }

    /// True when the bags are disjoint and together hold exactly `ids`.
    pub fn partitions<'a>(&self, ids: impl IntoIterator<Item = &'a SegmentId>) -> bool {
        let all: BTreeSet<SegmentId> = ids.into_iter().copied().collect();
        self.is_disjoint() && all.len() == self.len() && all.iter().all(|id| self.label_of(*id).is_some())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["segment_id", "bag"])?;
        let mut rows: Vec<(SegmentId, &str)> = self
            .positive
            .iter()
            .map(|&id| (id, "A"))
            .chain(self.negative.iter().map(|&id| (id, "N")))
            .collect();
        rows.sort();
        for (id, bag) in rows {
            w.write_record([id.to_string().as_str(), bag])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize, Serialize)]
        struct Row {
            segment_id: u32,
            bag: String,
        }
        let mut bags = Bags::default();
        for row in csv::Reader::from_path(path.as_ref())?.deserialize() {
            let row: Row = row?;
            let id = SegmentId(row.segment_id);
            if bags.label_of(id).is_some() {
                return Err(Error::DuplicateSegment(id.0));
            }
            match row.bag.as_str() {
                "A" => bags.positive.insert(id),
                "N" => bags.negative.insert(id),
                other => return Err(Error::InvalidArgument(format!("unknown bag {other:?}"))),
            };
        }
        Ok(bags)
    }
}

pub fn form_bags(scores: &[PseudoScore], tau: f64) -> Result<Bags> {
    if scores.is_empty() {
        return Err(Error::Empty("score list"));
    }
    let mut bags = Bags::default();
    for s in scores {
        if bags.label_of(s.segment_id).is_some() {
            return Err(Error::DuplicateSegment(s.segment_id.0));
        }
        if assign_label(s.y_s_hat, s.y_d_hat, tau)? == 1 {
            bags.positive.insert(s.segment_id);
        } else {
            bags.negative.insert(s.segment_id);
        }
    }
    Ok(bags)
}

/// Rebuilds the bags from fresh scores only; previous membership is dropped.
pub fn remap_bags(old: &Bags, new_scores: &[PseudoScore], tau: f64) -> Result<Bags> {
    let bags = form_bags(new_scores, tau)?;
    if bags.len() != old.len() || new_scores.iter().any(|s| old.label_of(s.segment_id).is_none()) {
        return Err(Error::CoverageMismatch(format!(
            "{} new scores for {} bagged segments",
            new_scores.len(),
            old.len()
        )));
    }
    Ok(bags)
}
