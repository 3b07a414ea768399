use std::collections::BTreeMap;
use std::fmt::Write;

use super::{Act, ConvLayer, FcLayer, LayerSpec, NetworkSpec, DEFAULT_ACT_BITS};
use crate::NetError;

struct Directive<'a> {
    line: usize,
    keys: BTreeMap<&'a str, &'a str>,
    flags: Vec<&'a str>,
}

impl<'a> Directive<'a> {
    fn parse(line: usize, tokens: &[&'a str]) -> Result<Self, NetError> {
        let mut keys = BTreeMap::new();
        let mut flags = Vec::new();
        for tok in tokens {
            match tok.split_once('=') {
                Some((k, v)) => {
                    if k.is_empty() || v.is_empty() {
                        return Err(syntax(line, format!("malformed `{tok}`")));
                    }
                    if keys.insert(k, v).is_some() {
                        return Err(syntax(line, format!("`{k}` given twice")));
                    }
                }
                None => flags.push(*tok),
            }
        }
        Ok(Self { line, keys, flags })
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str, default: Option<T>) -> Result<T, NetError> {
        match self.keys.remove(key) {
            Some(v) => v
                .parse()
                .map_err(|_| syntax(self.line, format!("invalid value `{v}` for `{key}`"))),
            None => default.ok_or_else(|| syntax(self.line, format!("missing `{key}=`"))),
        }
    }

    fn act(&mut self) -> Result<Act, NetError> {
        match self.keys.remove("act") {
            None => Ok(Act::Default),
            Some("none") => Ok(Act::Linear),
            Some(v) => v
                .parse()
                .map(Act::Bits)
                .map_err(|_| syntax(self.line, format!("invalid value `{v}` for `act`"))),
        }
    }

    fn flag(&mut self, name: &str) -> bool {
        let before = self.flags.len();
        self.flags.retain(|f| *f != name);
        self.flags.len() != before
    }

    fn finish(self) -> Result<(), NetError> {
        if let Some(k) = self.keys.keys().next() {
            return Err(syntax(self.line, format!("unknown key `{k}`")));
        }
        if let Some(f) = self.flags.first() {
            return Err(syntax(self.line, format!("unexpected token `{f}`")));
        }
        Ok(())
    }
}

fn syntax(line: usize, msg: String) -> NetError {
    NetError::Syntax { line, msg }
}

fn positional<T: std::str::FromStr>(line: usize, what: &str, tok: &str) -> Result<T, NetError> {
    tok.parse()
        .map_err(|_| syntax(line, format!("invalid {what} `{tok}`")))
}

/// Parses and validates a network description. Lines are one directive
/// each; `#` starts a comment.
pub fn parse_netdesc(text: &str) -> Result<NetworkSpec, NetError> {
    let mut name = None;
    let mut bits = None;
    let mut layers = Vec::new();
    let mut lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = body.split_whitespace().collect();
        let Some((&head, args)) = tokens.split_first() else {
            continue;
        };
        let layer = match head {
            "name" | "bits" => {
                let [value] = args else {
                    return Err(syntax(line, format!("`{head}` takes exactly one value")));
                };
                let slot_taken = if head == "name" {
                    name.replace(value.to_string()).is_some()
                } else {
                    bits.replace(positional::<u8>(line, "bit-width", value)?).is_some()
                };
                if slot_taken {
                    return Err(syntax(line, format!("`{head}` given twice")));
                }
                continue;
            }
            "input" => {
                let [h, w, c, b] = args else {
                    return Err(syntax(line, "`input` takes H W C BITS".into()));
                };
                LayerSpec::Input {
                    h: positional(line, "height", h)?,
                    w: positional(line, "width", w)?,
                    c: positional(line, "channel count", c)?,
                    bits: positional(line, "bit-width", b)?,
                }
            }
            "conv" => {
                let mut d = Directive::parse(line, args)?;
                let layer = LayerSpec::Conv(ConvLayer {
                    k: d.num("k", None)?,
                    stride: d.num("s", Some(1))?,
                    pad: d.num("p", Some(0))?,
                    out: d.num("o", None)?,
                    d: d.num("d", None)?,
                    act: d.act()?,
                });
                d.finish()?;
                layer
            }
            "maxpool" => {
                let mut d = Directive::parse(line, args)?;
                let layer = LayerSpec::MaxPool {
                    k: d.num("k", None)?,
                    stride: d.num("s", None)?,
                    pad: d.num("p", Some(0))?,
                };
                d.finish()?;
                layer
            }
            "avgpool" => {
                let mut d = Directive::parse(line, args)?;
                let layer = LayerSpec::AvgPool {
                    k: d.num("k", None)?,
                    stride: d.num("s", None)?,
                };
                d.finish()?;
                layer
            }
            "resblock" => {
                let mut d = Directive::parse(line, args)?;
                let layer = LayerSpec::ResBlock {
                    out: d.num("o", None)?,
                    stride: d.num("s", Some(1))?,
                    d: d.num("d", None)?,
                    proj: d.flag("proj"),
                };
                d.finish()?;
                layer
            }
            "fc" => {
                let mut d = Directive::parse(line, args)?;
                let layer = LayerSpec::Fc(FcLayer {
                    out: d.num("o", None)?,
                    d: d.num("d", None)?,
                    act: d.act()?,
                });
                d.finish()?;
                layer
            }
            other => {
                return Err(NetError::UnknownDirective {
                    line,
                    name: other.to_string(),
                })
            }
        };
        layers.push(layer);
        lines.push(line);
    }
    let spec = NetworkSpec {
        name: name.unwrap_or_else(|| "net".to_string()),
        act_bits: bits.unwrap_or(DEFAULT_ACT_BITS),
        layers,
    };
    spec.layer_io_with_lines(Some(&lines))?;
    Ok(spec)
}

fn act_suffix(act: Act) -> String {
    match act {
        Act::Default => String::new(),
        Act::Bits(n) => format!(" act={n}"),
        Act::Linear => " act=none".to_string(),
    }
}

/// Writes a network back in the text format accepted by [`parse_netdesc`].
pub fn emit_netdesc(spec: &NetworkSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "name {}", spec.name);
    let _ = writeln!(out, "bits {}", spec.act_bits);
    for layer in &spec.layers {
        let _ = match *layer {
            LayerSpec::Input { h, w, c, bits } => writeln!(out, "input {h} {w} {c} {bits}"),
            LayerSpec::Conv(c) => writeln!(
                out,
                "conv k={} s={} p={} o={} d={}{}",
                c.k,
                c.stride,
                c.pad,
                c.out,
                c.d,
                act_suffix(c.act)
            ),
            LayerSpec::MaxPool { k, stride, pad } => writeln!(out, "maxpool k={k} s={stride} p={pad}"),
            LayerSpec::AvgPool { k, stride } => writeln!(out, "avgpool k={k} s={stride}"),
            LayerSpec::ResBlock { out: o, stride, d, proj } => writeln!(
                out,
                "resblock o={o} s={stride} d={d}{}",
                if proj { " proj" } else { "" }
            ),
            LayerSpec::Fc(f) => writeln!(out, "fc o={} d={}{}", f.out, f.d, act_suffix(f.act)),
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_layer_example() {
        let net = parse_netdesc("input 32 32 3 8\nconv k=3 s=1 p=1 o=64 d=4\n").unwrap();
        assert_eq!(net.layers.len(), 2);
        assert_eq!(
            net.layers[1],
            LayerSpec::Conv(ConvLayer {
                k: 3,
                stride: 1,
                pad: 1,
                out: 64,
                d: 4.0,
                act: Act::Default
            })
        );
        assert_eq!(net.act_bits, 2);
    }

    #[test]
    fn malformed_stride_names_line() {
        let err = parse_netdesc("input 8 8 1 2\n\nconv k=3 s=x o=2 d=1\n").unwrap_err();
        assert_eq!(
            err,
            NetError::Syntax {
                line: 3,
                msg: "invalid value `x` for `s`".into()
            }
        );
        assert!(err.to_string().starts_with("line 3:"));
    }

    #[test]
    fn unknown_directive_and_key() {
        assert!(matches!(
            parse_netdesc("input 8 8 1 2\ndropout p=0.5\n"),
            Err(NetError::UnknownDirective { line: 2, .. })
        ));
        assert!(matches!(
            parse_netdesc("input 8 8 1 2\nconv k=3 o=1 d=1 q=2\n"),
            Err(NetError::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn shape_error_carries_line() {
        let err = parse_netdesc("# tiny\ninput 2 2 1 2\nconv k=5 o=1 d=1\n").unwrap_err();
        assert!(matches!(err, NetError::Shape { line: Some(3), layer: 1, .. }));
    }

    #[test]
    fn comments_and_options() {
        let text = "name demo # title\nbits 3\ninput 8 8 2 3\nresblock o=2 d=0.5\nfc o=4 d=2 act=none\n";
        let net = parse_netdesc(text).unwrap();
        assert_eq!(net.name, "demo");
        assert_eq!(net.act_bits, 3);
        assert_eq!(
            net.layers[1],
            LayerSpec::ResBlock {
                out: 2,
                stride: 1,
                d: 0.5,
                proj: false
            }
        );
    }

    #[test]
    fn round_trip() {
        let text = "input 16 16 3 8\nconv k=3 s=2 p=1 o=8 d=1.25 act=3\nmaxpool k=2 s=2\nresblock o=16 s=2 d=0.1 proj\navgpool k=2 s=2\nfc o=10 d=1 act=none\n";
        let net = parse_netdesc(text).unwrap();
        assert_eq!(parse_netdesc(&emit_netdesc(&net)).unwrap(), net);
    }
}
