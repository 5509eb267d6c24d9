//! Weekly time axis shared by every series in a corpus.
//!
//! A [`Week`] indexes Sunday-to-Saturday blocks counted from the Unix epoch, so
//! Sunday-start (MMWR) and Monday-start (ISO) week labels of the same week
//! land on the same index. The calendar year of a week is the year of its
//! Wednesday, which agrees with the MMWR week-year rule.

use std::fmt;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => panic!("valid epoch"),
};

/// Index of a Sunday-to-Saturday week.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Week(pub i64);

impl Week {
    pub fn from_date(date: NaiveDate) -> Self {
        let days = (date - EPOCH).num_days();
        // 1970-01-01 is a Thursday; shift so blocks start on Sunday.
        Week((days + 4).div_euclid(7))
    }

    /// Sunday that opens this week.
    pub fn sunday(self) -> NaiveDate {
        EPOCH + Duration::days(7 * self.0 - 4)
    }

    pub fn year(self) -> i32 {
        (self.sunday() + Duration::days(3)).year()
    }

    /// First week whose year is `year`.
    pub fn first_of_year(year: i32) -> Self {
        let jan1 = NaiveDate::from_ymd_opt(year, 1, 1).expect("year in chrono range");
        let w = Week::from_date(jan1);
        if w.year() == year {
            w
        } else {
            w + 1
        }
    }

    pub fn offset_from(self, other: Week) -> i64 {
        self.0 - other.0
    }
}

impl std::ops::Add<i64> for Week {
    type Output = Week;
    fn add(self, rhs: i64) -> Week {
        Week(self.0 + rhs)
    }
}

impl std::ops::Sub<i64> for Week {
    type Output = Week;
    fn sub(self, rhs: i64) -> Week {
        Week(self.0 - rhs)
    }
}

impl fmt::Display for Week {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.sunday())
    }
}
