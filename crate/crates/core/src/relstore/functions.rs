//! Extra SQL functions registered on every connection.
//!
//! The bundled engine ships without its optional math library, and feature
//! queries routinely want standard deviations and logarithms.

use rusqlite::functions::{Aggregate, Context, FunctionFlags};
use rusqlite::Connection;

type Unary = fn(f64) -> f64;

const UNARY: &[(&str, Unary)] = &[
    ("sqrt", f64::sqrt),
    ("ln", f64::ln),
    ("log10", f64::log10),
    ("log2", f64::log2),
    ("exp", f64::exp),
    ("floor", f64::floor),
    ("ceil", f64::ceil),
    ("ceiling", f64::ceil),
    ("sign", f64::signum),
    ("log1p", f64::ln_1p),
];

pub fn register(conn: &Connection) -> rusqlite::Result<()> {
    let flags = FunctionFlags::SQLITE_UTF8 | FunctionFlags::SQLITE_DETERMINISTIC;
    for &(name, f) in UNARY {
        conn.create_scalar_function(name, 1, flags, move |ctx| Ok(unary(ctx, f)))?;
    }
    conn.create_scalar_function("log", 1, flags, |ctx| Ok(unary(ctx, f64::ln)))?;
    conn.create_scalar_function("log", 2, flags, |ctx| {
        let base: Option<f64> = ctx.get(0)?;
        let x: Option<f64> = ctx.get(1)?;
        Ok(base.zip(x).map(|(b, x)| x.ln() / b.ln()).filter(|v| v.is_finite()))
    })?;
    for name in ["pow", "power"] {
        conn.create_scalar_function(name, 2, flags, |ctx| {
            let a: Option<f64> = ctx.get(0)?;
            let b: Option<f64> = ctx.get(1)?;
            Ok(a.zip(b).map(|(a, b)| a.powf(b)).filter(|v| v.is_finite()))
        })?;
    }
    for (name, sample, root) in [
        ("stddev", true, true),
        ("stddev_samp", true, true),
        ("stddev_pop", false, true),
        ("variance", true, false),
        ("var_samp", true, false),
        ("var_pop", false, false),
    ] {
        conn.create_aggregate_function(name, 1, flags, Moments { sample, root })?;
    }
    Ok(())
}

fn unary(ctx: &Context<'_>, f: Unary) -> Option<f64> {
    let x: Option<f64> = ctx.get(0).ok().flatten();
    x.map(f).filter(|v| v.is_finite())
}

/// Welford accumulator for variance / standard deviation.
struct Moments {
    sample: bool,
    root: bool,
}

#[derive(Default)]
struct Acc {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Aggregate<Acc, Option<f64>> for Moments {
    fn init(&self, _: &mut Context<'_>) -> rusqlite::Result<Acc> {
        Ok(Acc::default())
    }

    fn step(&self, ctx: &mut Context<'_>, acc: &mut Acc) -> rusqlite::Result<()> {
        if let Some(x) = ctx.get::<Option<f64>>(0)? {
            acc.n += 1;
            let delta = x - acc.mean;
            acc.mean += delta / acc.n as f64;
            acc.m2 += delta * (x - acc.mean);
        }
        Ok(())
    }

    fn finalize(&self, _: &mut Context<'_>, acc: Option<Acc>) -> rusqlite::Result<Option<f64>> {
        let Some(acc) = acc else { return Ok(None) };
        let denom = if self.sample { acc.n.saturating_sub(1) } else { acc.n };
        if denom == 0 {
            return Ok(None);
        }
        let var = acc.m2 / denom as f64;
        Ok(Some(if self.root { var.sqrt() } else { var }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stddev_and_math() {
        let conn = Connection::open_in_memory().unwrap();
        register(&conn).unwrap();
        conn.execute_batch("CREATE TABLE t(x REAL); INSERT INTO t VALUES (2),(4),(4),(4),(5),(5),(7),(9);").unwrap();
        let (pop, samp): (f64, f64) =
            conn.query_row("SELECT stddev_pop(x), stddev(x) FROM t", [], |r| Ok((r.get(0)?, r.get(1)?))).unwrap();
        assert!((pop - 2.0).abs() < 1e-12);
        assert!((samp - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        let v: f64 = conn.query_row("SELECT sqrt(16) + ln(1) + log(10, 100)", [], |r| r.get(0)).unwrap();
        assert!((v - 6.0).abs() < 1e-12);
        let single: Option<f64> = conn.query_row("SELECT stddev(x) FROM t WHERE x = 2", [], |r| r.get(0)).unwrap();
        assert_eq!(single, None);
    }
}
