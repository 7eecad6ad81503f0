//! Detection events shared by every detector and by the post-classifier.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::time::Timestamp;

/// Content hash identifying an event independently of run order or worker count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

impl EventId {
    pub fn derive(
        archive_id: &str,
        channel: u16,
        algorithm_id: &str,
        t0: Timestamp,
        f_lo: f64,
        f_hi: f64,
    ) -> Self {
        let key = format!(
            "{archive_id}\u{1f}{channel}\u{1f}{algorithm_id}\u{1f}{}\u{1f}{f_lo:.3}\u{1f}{f_hi:.3}",
            t0.round_to_millis().micros() / 1000
        );
        let digest = Sha256::digest(key.as_bytes());
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        Self(u64::from_be_bytes(b))
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid event id '{0}'")]
pub struct EventIdParseError(String);

impl FromStr for EventId {
    type Err = EventIdParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 16 {
            return Err(EventIdParseError(s.into()));
        }
        u64::from_str_radix(s, 16).map(EventId).map_err(|_| EventIdParseError(s.into()))
    }
}

impl Serialize for EventId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EventId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub event_id: EventId,
    pub channel: u16,
    pub algorithm_id: String,
    pub t0: Timestamp,
    pub t1: Timestamp,
    pub f_lo: f64,
    pub f_hi: f64,
    /// Detector confidence in `[0, 1]`.
    pub score: f64,
    /// Post-classifier score, attached by rescoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hk_score: Option<f64>,
    pub features: BTreeMap<String, f64>,
}

/// Time-frequency bounds of a detection before it receives an id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub t0: Timestamp,
    pub t1: Timestamp,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl DetectionEvent {
    /// Times are snapped to whole milliseconds so exported events re-import exactly.
    pub fn new(
        archive_id: &str,
        channel: u16,
        algorithm_id: &str,
        bounds: Bounds,
        score: f64,
        features: BTreeMap<String, f64>,
    ) -> Self {
        let t0 = bounds.t0.round_to_millis();
        let mut t1 = bounds.t1.round_to_millis();
        if t1 <= t0 {
            t1 = t0 + 1000;
        }
        Self {
            event_id: EventId::derive(archive_id, channel, algorithm_id, t0, bounds.f_lo, bounds.f_hi),
            channel,
            algorithm_id: algorithm_id.to_string(),
            t0,
            t1,
            f_lo: bounds.f_lo,
            f_hi: bounds.f_hi,
            score,
            hk_score: None,
            features,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.t1.seconds_since(self.t0)
    }

    /// Intersection over union of the two time intervals.
    pub fn time_iou(&self, other: &DetectionEvent) -> f64 {
        let inter = (self.t1.min(other.t1) - self.t0.max(other.t0)).max(0);
        let union = self.t1.max(other.t1) - self.t0.min(other.t0);
        if union <= 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Sort key used by every merged output.
    pub fn order_key(&self) -> (Timestamp, u16, &str, EventId) {
        (self.t0, self.channel, self.algorithm_id.as_str(), self.event_id)
    }
}

pub fn sort_events(events: &mut [DetectionEvent]) {
    events.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds(t0_s: f64) -> Bounds {
        let o = Timestamp::from_ymd_hms(2013, 3, 1, 0, 0, 0);
        Bounds { t0: o.add_seconds(t0_s), t1: o.add_seconds(t0_s + 1.0), f_lo: 100.0, f_hi: 200.0 }
    }

    #[test]
    fn id_is_stable_and_sensitive() {
        let a = DetectionEvent::new("arch", 0, "cra", bounds(10.0), 0.9, BTreeMap::new());
        let b = DetectionEvent::new("arch", 0, "cra", bounds(10.0004), 0.1, BTreeMap::new());
        assert_eq!(a.event_id, b.event_id, "sub-millisecond jitter and score do not matter");
        let c = DetectionEvent::new("arch", 1, "cra", bounds(10.0), 0.9, BTreeMap::new());
        let d = DetectionEvent::new("arch", 0, "hog", bounds(10.0), 0.9, BTreeMap::new());
        assert_ne!(a.event_id, c.event_id);
        assert_ne!(a.event_id, d.event_id);
        assert_eq!(a.event_id.to_string().parse::<EventId>().unwrap(), a.event_id);
    }

    #[test]
    fn iou() {
        let a = DetectionEvent::new("x", 0, "cra", bounds(0.0), 1.0, BTreeMap::new());
        let b = DetectionEvent::new("x", 0, "cra", bounds(0.5), 1.0, BTreeMap::new());
        assert!((a.time_iou(&b) - 0.5 / 1.5).abs() < 1e-12);
        assert_eq!(a.time_iou(&a), 1.0);
    }
}
