//! Hourly per-class station counts rolled up into per-window observations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use thiserror::Error;

use crate::geomatch::DirectionCode;
use crate::network::EdgeId;
use crate::state::{ClassShare, NUM_CLASSES};

/// One station-direction-hour of class counts (classes 5 through 13).
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyClassRecord {
    pub station_id: String,
    pub direction: DirectionCode,
    /// Station-local calendar hour.
    pub timestamp: NaiveDateTime,
    pub counts: [f64; NUM_CLASSES],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DayFilter {
    All,
    Weekday,
    Weekend,
}

/// Time-of-day band. `T0` wraps midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HourBand {
    All,
    /// 22:00-04:00
    T0,
    /// 04:00-10:00
    T1,
    /// 10:00-16:00
    T2,
    /// 16:00-22:00
    T3,
}

impl HourBand {
    pub const BANDS: [HourBand; 4] = [HourBand::T0, HourBand::T1, HourBand::T2, HourBand::T3];

    /// Half-open membership test on the hour of day.
    pub fn contains(self, hour: u32) -> bool {
        match self {
            HourBand::All => true,
            HourBand::T0 => !(4..22).contains(&hour),
            HourBand::T1 => (4..10).contains(&hour),
            HourBand::T2 => (10..16).contains(&hour),
            HourBand::T3 => (16..22).contains(&hour),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AggregationWindow {
    pub day: DayFilter,
    pub band: HourBand,
    /// Calendar month 1..=12, or every month.
    pub month: Option<u32>,
}

impl AggregationWindow {
    pub const ALL: AggregationWindow = AggregationWindow {
        day: DayFilter::All,
        band: HourBand::All,
        month: None,
    };

    pub fn band(band: HourBand) -> Self {
        AggregationWindow { band, ..Self::ALL }
    }
}

impl Default for AggregationWindow {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid aggregation window {0:?}, expected day:band:month such as weekday:T0:all")]
pub struct WindowParseError(pub String);

impl fmt::Display for AggregationWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let day = match self.day {
            DayFilter::All => "all",
            DayFilter::Weekday => "weekday",
            DayFilter::Weekend => "weekend",
        };
        let band = match self.band {
            HourBand::All => "all",
            HourBand::T0 => "T0",
            HourBand::T1 => "T1",
            HourBand::T2 => "T2",
            HourBand::T3 => "T3",
        };
        match self.month {
            Some(m) => write!(f, "{day}:{band}:{m}"),
            None => write!(f, "{day}:{band}:all"),
        }
    }
}

impl FromStr for AggregationWindow {
    type Err = WindowParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || WindowParseError(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let [day, band, month] = parts[..] else {
            return Err(bad());
        };
        let day = match day.to_ascii_lowercase().as_str() {
            "all" => DayFilter::All,
            "weekday" => DayFilter::Weekday,
            "weekend" => DayFilter::Weekend,
            _ => return Err(bad()),
        };
        let band = match band.to_ascii_uppercase().as_str() {
            "ALL" => HourBand::All,
            "T0" => HourBand::T0,
            "T1" => HourBand::T1,
            "T2" => HourBand::T2,
            "T3" => HourBand::T3,
            _ => return Err(bad()),
        };
        let month = match month.to_ascii_lowercase().as_str() {
            "all" => None,
            m => match m.parse::<u32>() {
                Ok(v @ 1..=12) => Some(v),
                _ => return Err(bad()),
            },
        };
        Ok(AggregationWindow { day, band, month })
    }
}

/// Whether a station-local hour falls inside `window`. Weekdays are Mon-Fri.
pub fn window_membership(timestamp: &NaiveDateTime, window: &AggregationWindow) -> bool {
    let weekend = matches!(timestamp.weekday(), Weekday::Sat | Weekday::Sun);
    let day_ok = match window.day {
        DayFilter::All => true,
        DayFilter::Weekday => !weekend,
        DayFilter::Weekend => weekend,
    };
    day_ok
        && window.band.contains(timestamp.hour())
        && window.month.is_none_or(|m| timestamp.month() == m)
}

/// Direction-specific station summary for one aggregation window.
#[derive(Debug, Clone, PartialEq)]
pub struct StationObservation {
    pub station_id: String,
    pub direction: DirectionCode,
    pub window: AggregationWindow,
    /// Vehicles/hour over classes 5-13.
    pub mean_hourly_volume: f64,
    pub class_share: ClassShare,
    pub n_hours: usize,
    pub matched_edge: Option<EdgeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmitReason {
    NoHoursInWindow,
    ZeroTotalCount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmittedStation {
    pub station_id: String,
    pub direction: DirectionCode,
    pub reason: OmitReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregation {
    /// Ordered by (station_id, direction).
    pub observations: Vec<StationObservation>,
    pub omitted: Vec<OmittedStation>,
}

/// Rolls hourly records up into one observation per (station, direction).
pub fn aggregate_records(records: &[HourlyClassRecord], window: &AggregationWindow) -> Aggregation {
    struct Acc {
        totals: [f64; NUM_CLASSES],
        hours: usize,
    }
    let mut groups: BTreeMap<(&str, DirectionCode), Acc> = BTreeMap::new();
    for r in records {
        let acc = groups
            .entry((r.station_id.as_str(), r.direction))
            .or_insert(Acc {
                totals: [0.0; NUM_CLASSES],
                hours: 0,
            });
        if window_membership(&r.timestamp, window) {
            for (t, c) in acc.totals.iter_mut().zip(&r.counts) {
                *t += c;
            }
            acc.hours += 1;
        }
    }

    let mut out = Aggregation::default();
    for ((station_id, direction), acc) in groups {
        let omit = |reason| OmittedStation {
            station_id: station_id.to_string(),
            direction,
            reason,
        };
        if acc.hours == 0 {
            out.omitted.push(omit(OmitReason::NoHoursInWindow));
            continue;
        }
        let Ok(class_share) = ClassShare::from_counts(&acc.totals) else {
            out.omitted.push(omit(OmitReason::ZeroTotalCount));
            continue;
        };
        let total: f64 = acc.totals.iter().sum();
        out.observations.push(StationObservation {
            station_id: station_id.to_string(),
            direction,
            window: *window,
            mean_hourly_volume: total / acc.hours as f64,
            class_share,
            n_hours: acc.hours,
            matched_edge: None,
        });
    }
    out
}

/// Combines several observations of the same edge as if their hours had been
/// aggregated together. Returns `None` for an empty slice.
pub fn pool_observations<'a>(
    obs: impl IntoIterator<Item = &'a StationObservation>,
) -> Option<(f64, ClassShare)> {
    let mut totals = [0.0; NUM_CLASSES];
    let mut hours = 0usize;
    for o in obs {
        let vehicles = o.mean_hourly_volume * o.n_hours as f64;
        for (t, p) in totals.iter_mut().zip(o.class_share.as_array()) {
            *t += vehicles * p;
        }
        hours += o.n_hours;
    }
    if hours == 0 {
        return None;
    }
    let total: f64 = totals.iter().sum();
    let share = ClassShare::from_counts(&totals).ok()?;
    Some((total / hours as f64, share))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn ts(y: i32, m: u32, d: u32, h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, 0, 0).unwrap()
    }

    fn rec(t: NaiveDateTime, c5: f64, c9: f64) -> HourlyClassRecord {
        let mut counts = [0.0; NUM_CLASSES];
        counts[0] = c5;
        counts[4] = c9;
        HourlyClassRecord {
            station_id: "000123".into(),
            direction: DirectionCode::E,
            timestamp: t,
            counts,
        }
    }

    #[test]
    fn two_hour_rollup() {
        // 2021-03-01 is a Monday
        let recs = [rec(ts(2021, 3, 1, 8), 10.0, 30.0), rec(ts(2021, 3, 1, 9), 30.0, 50.0)];
        let agg = aggregate_records(&recs, &AggregationWindow::ALL);
        assert_eq!(agg.observations.len(), 1);
        let o = &agg.observations[0];
        assert_eq!(o.mean_hourly_volume, 60.0);
        assert_eq!(o.n_hours, 2);
        assert!((o.class_share.get(5) - 1.0 / 3.0).abs() < 1e-15);
        assert!((o.class_share.get(9) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn t0_wraps_midnight() {
        let recs = [rec(ts(2021, 3, 1, 23), 10.0, 30.0), rec(ts(2021, 3, 2, 2), 30.0, 50.0)];
        let agg = aggregate_records(&recs, &AggregationWindow::band(HourBand::T0));
        assert_eq!(agg.observations[0].n_hours, 2);
    }

    #[test]
    fn empty_month_is_omitted() {
        let recs = [rec(ts(2021, 7, 5, 12), 1.0, 1.0), rec(ts(2021, 7, 6, 12), 1.0, 1.0)];
        let w = AggregationWindow {
            month: Some(3),
            ..AggregationWindow::ALL
        };
        let agg = aggregate_records(&recs, &w);
        assert!(agg.observations.is_empty());
        assert_eq!(agg.omitted.len(), 1);
        assert_eq!(agg.omitted[0].reason, OmitReason::NoHoursInWindow);
    }

    #[test]
    fn zero_count_station_is_omitted() {
        let recs = [rec(ts(2021, 7, 5, 12), 0.0, 0.0)];
        let agg = aggregate_records(&recs, &AggregationWindow::ALL);
        assert_eq!(agg.omitted[0].reason, OmitReason::ZeroTotalCount);
    }

    #[test]
    fn membership_boundaries() {
        let four = ts(2021, 3, 1, 4);
        assert!(window_membership(&four, &AggregationWindow::band(HourBand::T1)));
        assert!(!window_membership(&four, &AggregationWindow::band(HourBand::T0)));
        assert!(window_membership(&ts(2021, 3, 1, 22), &AggregationWindow::band(HourBand::T0)));
        // 2021-03-06 is a Saturday
        let sat = ts(2021, 3, 6, 13);
        let weekday = AggregationWindow {
            day: DayFilter::Weekday,
            ..AggregationWindow::ALL
        };
        let weekend = AggregationWindow {
            day: DayFilter::Weekend,
            ..AggregationWindow::ALL
        };
        assert!(!window_membership(&sat, &weekday));
        assert!(window_membership(&sat, &weekend));
    }

    #[test]
    fn window_labels_round_trip() {
        for label in ["all:all:all", "weekday:T0:all", "weekend:T3:12", "all:T2:7"] {
            let w: AggregationWindow = label.parse().unwrap();
            assert_eq!(w.to_string(), label);
        }
        assert!("weekday:T5:all".parse::<AggregationWindow>().is_err());
        assert!("all:all:13".parse::<AggregationWindow>().is_err());
        assert!("all:all".parse::<AggregationWindow>().is_err());
    }

    #[test]
    fn pooling_matches_joint_aggregation() {
        let a = [rec(ts(2021, 3, 1, 8), 10.0, 30.0)];
        let b = [rec(ts(2021, 3, 1, 9), 30.0, 50.0), rec(ts(2021, 3, 1, 10), 5.0, 0.0)];
        let oa = aggregate_records(&a, &AggregationWindow::ALL).observations;
        let ob = aggregate_records(&b, &AggregationWindow::ALL).observations;
        let (v, s) = pool_observations(oa.iter().chain(&ob)).unwrap();
        let joint: Vec<_> = a.iter().chain(&b).cloned().collect();
        let j = &aggregate_records(&joint, &AggregationWindow::ALL).observations[0];
        assert!((v - j.mean_hourly_volume).abs() < 1e-12);
        for c in crate::state::classes() {
            assert!((s.get(c) - j.class_share.get(c)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn bands_partition_the_day(
            hours in proptest::collection::vec((0u32..24, 1u32..28, 1u32..=12), 1..60),
        ) {
            let mut seen = std::collections::HashSet::new();
            let recs: Vec<HourlyClassRecord> = hours
                .into_iter()
                .filter(|&(h, d, m)| seen.insert((h, d, m)))
                .map(|(h, d, m)| rec(ts(2021, m, d, h), 1.0, 2.0))
                .collect();
            for h in 0..24 {
                let n = HourBand::BANDS.iter().filter(|b| b.contains(h)).count();
                prop_assert_eq!(n, 1);
            }
            for day in [DayFilter::All, DayFilter::Weekday, DayFilter::Weekend] {
                let base = AggregationWindow { day, ..AggregationWindow::ALL };
                let all = aggregate_records(&recs, &base).observations.first().map_or(0, |o| o.n_hours);
                let split: usize = HourBand::BANDS
                    .iter()
                    .map(|&band| {
                        aggregate_records(&recs, &AggregationWindow { band, ..base })
                            .observations
                            .first()
                            .map_or(0, |o| o.n_hours)
                    })
                    .sum();
                prop_assert_eq!(all, split);
            }
        }

        #[test]
        fn single_record_reproduces_its_shares(
            counts in proptest::array::uniform9(0.0f64..500.0),
            scale in 0.01f64..100.0,
        ) {
            prop_assume!(counts.iter().sum::<f64>() > 1e-9);
            let mut r = rec(ts(2021, 5, 5, 5), 0.0, 0.0);
            r.counts = counts;
            let direct = ClassShare::from_counts(&counts).unwrap();
            let o = aggregate_records(std::slice::from_ref(&r), &AggregationWindow::ALL).observations.remove(0);
            prop_assert_eq!(o.class_share, direct);
            r.counts.iter_mut().for_each(|c| *c *= scale);
            let scaled = aggregate_records(&[r], &AggregationWindow::ALL).observations.remove(0);
            for c in crate::state::classes() {
                prop_assert!((scaled.class_share.get(c) - direct.get(c)).abs() < 1e-12);
            }
        }
    }
}
