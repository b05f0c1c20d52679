//! JSON reports with floats at 17 significant digits.

use std::io;
use std::path::Path;

use hyperbolic_core::Vector;
use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::{json, Value};

struct Fixed17;

impl Formatter for Fixed17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
}

pub fn to_string(v: &Value) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Fixed17);
    v.serialize(&mut ser).expect("serializing a json value cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("json is utf-8")
}

pub fn vec(v: &Vector) -> Value {
    json!(v.as_slice())
}

/// Non-finite floats become `null`.
pub fn num(x: f64) -> Value {
    json!(x)
}

pub struct Envelope<'a> {
    pub command: &'a str,
    pub config_sha256: &'a str,
    pub seed: u64,
    pub tol_scale: f64,
}

impl Envelope<'_> {
    pub fn wrap(&self, ok: bool, result: Value) -> Value {
        json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
            "tol_scale": self.tol_scale,
            "ok": ok,
            "result": result,
        })
    }
}

pub fn write(dir: &Path, name: &str, body: &str) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), body)
}
