use std::io::Write;
use std::path::Path;

use cloudopf::report::sig12;

use crate::Failure;

/// Long-format table `quantity,index,bus,value`, one scalar per row.
#[derive(Default)]
pub struct LongTable {
    rows: Vec<[String; 4]>,
}

impl LongTable {
    pub fn push(&mut self, quantity: &str, index: Option<usize>, bus: Option<u32>, value: f64) {
        self.rows.push([
            quantity.to_string(),
            index.map(|i| i.to_string()).unwrap_or_default(),
            bus.map(|b| b.to_string()).unwrap_or_default(),
            sig12(value),
        ]);
    }

    pub fn series(&mut self, quantity: &str, values: &[f64], bus_of: impl Fn(usize) -> u32) {
        for (i, &v) in values.iter().enumerate() {
            self.push(quantity, Some(i), Some(bus_of(i)), v);
        }
    }

    pub fn to_csv(&self) -> String {
        table(&["quantity", "index", "bus", "value"], self.rows.iter().map(|r| r.to_vec()))
    }
}

/// RFC 4180 text with a header row.
pub fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv write");
    for r in rows {
        w.write_record(&r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

pub fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::io(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::io(e.to_string())),
    }
}
