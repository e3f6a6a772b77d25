//! Line-oriented sequence dump: a header, then one event per line as a
//! keyword followed by decimal fields (ms, rad). Floats are written with the
//! shortest representation that parses back to the same value.

use std::fmt::Write as _;

use super::{Axis, Event, PrepModule, Sequence};
use crate::error::{Error, Result};

const HEADER: &str = "# bmapest sequence v1";

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn prep_line(p: &PrepModule) -> String {
    match *p {
        PrepModule::None => "prep none".into(),
        PrepModule::Inversion { ti } => format!("prep inversion {ti}"),
        PrepModule::DoubleInversion { ti1, ti2 } => format!("prep double_inversion {ti1} {ti2}"),
        PrepModule::T2Prep { tau } => format!("prep t2prep {tau}"),
        PrepModule::DiffusionPrep { b } => format!("prep diffusion {b}"),
    }
}

pub fn write_sequence(seq: &Sequence) -> String {
    let mut s = String::new();
    writeln!(s, "{HEADER}").unwrap();
    writeln!(s, "name {}", seq.name).unwrap();
    writeln!(s, "matrix {} {}", seq.matrix.0, seq.matrix.1).unwrap();
    writeln!(s, "tr {}", seq.tr).unwrap();
    writeln!(s, "flip {}", seq.flip).unwrap();
    writeln!(s, "echo_times {}", join(&seq.echo_times)).unwrap();
    for p in &seq.preps {
        writeln!(s, "{}", prep_line(p)).unwrap();
    }
    for e in &seq.events {
        match *e {
            Event::Pulse { alpha, phi } => writeln!(s, "PULSE {alpha} {phi}"),
            Event::Wait { t } => writeln!(s, "WAIT {t}"),
            Event::Grad { delta_n, axis } => writeln!(s, "GRAD {delta_n} {}", axis.name()),
            Event::Spoil => writeln!(s, "SPOIL"),
            Event::Diffuse { b } => writeln!(s, "DIFFUSE {b}"),
            Event::Adc { line, sample, echo, t_since_excitation, phase } => {
                writeln!(s, "ADC {line} {sample} {echo} {t_since_excitation} {phase}")
            }
        }
        .unwrap();
    }
    s
}

struct Fields<'a> {
    line: usize,
    it: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.it.next().ok_or_else(|| Error::Parse {
            line: self.line,
            reason: format!("missing {what}"),
        })?;
        tok.parse().map_err(|_| Error::Parse {
            line: self.line,
            reason: format!("bad {what} '{tok}'"),
        })
    }

    fn rest_f64(&mut self) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for tok in self.it.by_ref() {
            out.push(tok.parse().map_err(|_| Error::Parse {
                line: self.line,
                reason: format!("bad number '{tok}'"),
            })?);
        }
        Ok(out)
    }

    fn finish(mut self) -> Result<()> {
        match self.it.next() {
            None => Ok(()),
            Some(tok) => Err(Error::Parse {
                line: self.line,
                reason: format!("unexpected trailing field '{tok}'"),
            }),
        }
    }
}

pub fn parse_sequence(text: &str) -> Result<Sequence> {
    let mut seq = Sequence {
        name: String::new(),
        matrix: (0, 0),
        events: Vec::new(),
        echo_times: Vec::new(),
        tr: 0.0,
        flip: 0.0,
        preps: Vec::new(),
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let mut it = content.split_whitespace();
        let key = it.next().unwrap();
        let mut f = Fields { line, it };
        match key {
            "name" => {
                seq.name = f.next("name")?;
            }
            "matrix" => seq.matrix = (f.next("nx")?, f.next("ny")?),
            "tr" => seq.tr = f.next("tr")?,
            "flip" => seq.flip = f.next("flip")?,
            "echo_times" => seq.echo_times = f.rest_f64()?,
            "prep" => {
                let kind: String = f.next("prep kind")?;
                let p = match kind.as_str() {
                    "none" => PrepModule::None,
                    "inversion" => PrepModule::Inversion { ti: f.next("ti")? },
                    "double_inversion" => PrepModule::DoubleInversion {
                        ti1: f.next("ti1")?,
                        ti2: f.next("ti2")?,
                    },
                    "t2prep" => PrepModule::T2Prep { tau: f.next("tau")? },
                    "diffusion" => PrepModule::DiffusionPrep { b: f.next("b")? },
                    other => {
                        return Err(Error::Parse {
                            line,
                            reason: format!("unknown preparation '{other}'"),
                        })
                    }
                };
                seq.preps.push(p);
            }
            "PULSE" => seq.events.push(Event::Pulse {
                alpha: f.next("alpha")?,
                phi: f.next("phi")?,
            }),
            "WAIT" => seq.events.push(Event::Wait { t: f.next("t")? }),
            "GRAD" => {
                let delta_n = f.next("delta_n")?;
                let axis: String = f.next("axis")?;
                let axis = match axis.as_str() {
                    "readout" => Axis::Readout,
                    "phase" => Axis::Phase,
                    other => {
                        return Err(Error::Parse {
                            line,
                            reason: format!("unknown axis '{other}'"),
                        })
                    }
                };
                seq.events.push(Event::Grad { delta_n, axis });
            }
            "SPOIL" => seq.events.push(Event::Spoil),
            "DIFFUSE" => seq.events.push(Event::Diffuse { b: f.next("b")? }),
            "ADC" => seq.events.push(Event::Adc {
                line: f.next("line")?,
                sample: f.next("sample")?,
                echo: f.next("echo")?,
                t_since_excitation: f.next("t")?,
                phase: f.next("phase")?,
            }),
            other => {
                return Err(Error::Parse {
                    line,
                    reason: format!("unknown keyword '{other}'"),
                })
            }
        }
        if key != "echo_times" {
            f.finish()?;
        }
    }
    seq.validate()?;
    Ok(seq)
}
