//! Dispersion aggregates SQLite does not ship with.

use rusqlite::functions::{Aggregate, Context, FunctionFlags};
use rusqlite::types::ValueRef;
use rusqlite::Connection;

#[derive(Clone, Copy)]
enum Statistic {
    Variance,
    Stddev,
}

#[derive(Clone, Copy)]
struct Dispersion {
    statistic: Statistic,
    population: bool,
}

/// Welford running moments.
#[derive(Default)]
pub(crate) struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub(crate) fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub(crate) fn variance(&self, population: bool) -> Option<f64> {
        match (self.n, population) {
            (0, _) => None,
            (1, false) => None,
            (n, true) => Some(self.m2 / n as f64),
            (n, false) => Some(self.m2 / (n - 1) as f64),
        }
    }
}

impl Aggregate<Moments, Option<f64>> for Dispersion {
    fn init(&self, _ctx: &mut Context<'_>) -> rusqlite::Result<Moments> {
        Ok(Moments::default())
    }

    fn step(&self, ctx: &mut Context<'_>, acc: &mut Moments) -> rusqlite::Result<()> {
        let value = match ctx.get_raw(0) {
            ValueRef::Integer(i) => Some(i as f64),
            ValueRef::Real(r) => Some(r),
            ValueRef::Text(t) => std::str::from_utf8(t)
                .ok()
                .and_then(|s| s.trim().parse::<f64>().ok()),
            ValueRef::Null | ValueRef::Blob(_) => None,
        };
        if let Some(x) = value {
            acc.push(x);
        }
        Ok(())
    }

    fn finalize(&self, _ctx: &mut Context<'_>, acc: Option<Moments>) -> rusqlite::Result<Option<f64>> {
        let variance = acc.and_then(|m| m.variance(self.population));
        Ok(match self.statistic {
            Statistic::Variance => variance,
            Statistic::Stddev => variance.map(f64::sqrt),
        })
    }
}

pub(crate) fn register(conn: &Connection) -> rusqlite::Result<()> {
    let flags = FunctionFlags::SQLITE_UTF8 | FunctionFlags::SQLITE_DETERMINISTIC;
    let functions = [
        ("stddev", Statistic::Stddev, false),
        ("stddev_samp", Statistic::Stddev, false),
        ("std", Statistic::Stddev, false),
        ("stddev_pop", Statistic::Stddev, true),
        ("variance", Statistic::Variance, false),
        ("var_samp", Statistic::Variance, false),
        ("var_pop", Statistic::Variance, true),
    ];
    for (name, statistic, population) in functions {
        conn.create_aggregate_function(
            name,
            1,
            flags,
            Dispersion {
                statistic,
                population,
            },
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_two_pass_formula() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        assert!((m.variance(true).unwrap() - ss / 8.0).abs() < 1e-12);
        assert!((m.variance(false).unwrap() - ss / 7.0).abs() < 1e-12);
    }

    #[test]
    fn registered_in_sql() {
        let conn = Connection::open_in_memory().unwrap();
        register(&conn).unwrap();
        conn.execute_batch("CREATE TABLE t(x); INSERT INTO t VALUES (1),(2),(3),(NULL);")
            .unwrap();
        let (v, s, p, single): (f64, f64, f64, Option<f64>) = conn
            .query_row(
                "SELECT VARIANCE(x), STDDEV(x), VAR_POP(x), (SELECT STDDEV(x) FROM t WHERE x = 1) FROM t",
                [],
                |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?)),
            )
            .unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12);
        assert!((p - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(single, None);
    }
}
