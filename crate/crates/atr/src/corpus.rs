//! Reference programs, the self-delimiting list encoding, host oracles for
//! functional correctness, and term generators.

pub mod generate;
pub mod negative;

use std::collections::BTreeMap;
use std::path::Path;
use std::rc::Rc;

use thiserror::Error;

use crate::bits::Bits;
use crate::eval::{Builtin, OracleBinding, OracleTable};
use crate::parser::{parse_program, ParseError, SurfaceProgram};
use crate::syntax::{subst, TermKind, TermRef, Type};
use crate::typecheck::{infer, Derivation, TypeContext, TypeError};

pub const PROGRAM_NAMES: [&str; 9] =
    ["cons", "head", "tail", "leq", "insert", "ins_sort", "sel_sort", "reverse", "prn"];

/// Environment variable naming a directory that replaces the embedded corpus.
pub const CORPUS_DIR_VAR: &str = "ATR_CORPUS_DIR";

const EMBEDDED: [(&str, &str, Option<&str>); 9] = [
    ("cons", include_str!("../corpus/cons.atr"), None),
    ("head", include_str!("../corpus/head.atr"), None),
    ("tail", include_str!("../corpus/tail.atr"), None),
    ("leq", include_str!("../corpus/leq.atr"), None),
    ("insert", include_str!("../corpus/insert.atr"), None),
    ("ins_sort", include_str!("../corpus/ins_sort.atr"), None),
    ("sel_sort", include_str!("../corpus/sel_sort.atr"), None),
    ("reverse", include_str!("../corpus/reverse.atr"), None),
    ("prn", include_str!("../corpus/prn.atr"), Some(include_str!("../corpus/prn.oracles.json"))),
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{name}: {source}")]
    Parse { name: String, source: ParseError },
    #[error("{name}: {source}")]
    Type { name: String, source: TypeError },
    #[error("{name}: {message}")]
    Oracles { name: String, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// A parsed, desugared and typechecked program with its oracle bindings.
#[derive(Debug, Clone)]
pub struct CorpusProgram {
    pub name: String,
    pub source: String,
    pub surface: SurfaceProgram,
    pub term: TermRef,
    pub ty: Type,
    pub derivation: Derivation,
    pub oracles: OracleTable,
}

impl CorpusProgram {
    pub fn arity(&self) -> usize {
        self.ty.arity()
    }
}

/// Parses an oracle configuration: a JSON object from oracle name to builtin id.
pub fn parse_oracle_config(text: &str, surface: &SurfaceProgram) -> Result<OracleTable, String> {
    let map: BTreeMap<String, String> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let mut table = OracleTable::new();
    for (name, ty, _) in &surface.oracles {
        let id = map.get(name).ok_or_else(|| format!("no implementation configured for oracle `{}`", name))?;
        let b = Builtin::from_id(id).ok_or_else(|| format!("unknown builtin `{}` for oracle `{}`", id, name))?;
        table.insert(OracleBinding::builtin(name, ty.clone(), b));
    }
    Ok(table)
}

/// Loads one program from source text and an optional oracle configuration.
pub fn load_program(name: &str, source: &str, oracles: Option<&str>) -> Result<CorpusProgram, CorpusError> {
    let (surface, term) =
        parse_program(source).map_err(|source| CorpusError::Parse { name: name.to_string(), source })?;
    let derivation =
        infer(&term, &TypeContext::new()).map_err(|source| CorpusError::Type { name: name.to_string(), source })?;
    let oracles = match oracles {
        Some(text) => parse_oracle_config(text, &surface)
            .map_err(|message| CorpusError::Oracles { name: name.to_string(), message })?,
        None if surface.oracles.is_empty() => OracleTable::new(),
        None => {
            return Err(CorpusError::Oracles {
                name: name.to_string(),
                message: "program declares oracles but no configuration was given".into(),
            })
        }
    };
    Ok(CorpusProgram {
        name: name.to_string(),
        source: source.to_string(),
        surface,
        ty: derivation.ty.clone(),
        term,
        derivation,
        oracles,
    })
}

/// The corpus, read from `ATR_CORPUS_DIR` when set and embedded otherwise.
pub fn corpus_programs() -> Result<Vec<CorpusProgram>, CorpusError> {
    match std::env::var_os(CORPUS_DIR_VAR) {
        Some(dir) => load_dir(Path::new(&dir)),
        None => EMBEDDED.iter().map(|(n, s, o)| load_program(n, s, *o)).collect(),
    }
}

pub fn corpus_program(name: &str) -> Result<CorpusProgram, CorpusError> {
    match std::env::var_os(CORPUS_DIR_VAR) {
        Some(dir) => load_file(&Path::new(&dir).join(format!("{}.atr", name))),
        None => {
            let (n, s, o) = EMBEDDED.iter().find(|(n, _, _)| *n == name).ok_or_else(|| {
                CorpusError::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("no corpus program `{}`", name)))
            })?;
            load_program(n, s, *o)
        }
    }
}

/// Loads `path`, picking up `<stem>.oracles.json` beside it when present.
pub fn load_file(path: &Path) -> Result<CorpusProgram, CorpusError> {
    let source = std::fs::read_to_string(path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("program").to_string();
    let cfg = path.with_file_name(format!("{}.oracles.json", name));
    let oracles = if cfg.exists() { Some(std::fs::read_to_string(cfg)?) } else { None };
    load_program(&name, &source, oracles.as_deref())
}

pub fn load_dir(dir: &Path) -> Result<Vec<CorpusProgram>, CorpusError> {
    PROGRAM_NAMES.iter().map(|n| load_file(&dir.join(format!("{}.atr", n)))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed list encoding at bit {offset}")]
pub struct DecodeError {
    pub offset: usize,
}

/// Concatenates the self-delimiting codes `1b0 1b1 .. 1b(k-1) 0` of the items.
pub fn encode_list(items: &[Bits]) -> Bits {
    let mut out = Vec::new();
    for w in items {
        for &b in w.as_slice() {
            out.push(1);
            out.push(b);
        }
        out.push(0);
    }
    Bits::from_vec(out)
}

pub fn decode_list(bits: &Bits) -> Result<Vec<Bits>, DecodeError> {
    let s = bits.as_slice();
    let mut items = Vec::new();
    let mut cur = Vec::new();
    let mut i = 0;
    while i < s.len() {
        if s[i] == 0 {
            items.push(Bits::from_vec(std::mem::take(&mut cur)));
            i += 1;
        } else if i + 1 < s.len() {
            cur.push(s[i + 1]);
            i += 2;
        } else {
            return Err(DecodeError { offset: i });
        }
    }
    if !cur.is_empty() {
        return Err(DecodeError { offset: s.len() });
    }
    Ok(items)
}

/// Sort key for the numeric order of binary values.
fn numeric_key(w: &Bits) -> (usize, &[u8]) {
    let s = w.as_slice();
    let start = s.iter().position(|&b| b == 1).unwrap_or(s.len());
    (s.len() - start, &s[start..])
}

pub fn numeric_leq(a: &Bits, b: &Bits) -> bool {
    numeric_key(a) <= numeric_key(b)
}

/// Stable sort by binary value.
pub fn reference_sort(items: &[Bits]) -> Vec<Bits> {
    let mut v = items.to_vec();
    v.sort_by(|a, b| numeric_key(a).cmp(&numeric_key(b)));
    v
}

pub fn reference_reverse(items: &[Bits]) -> Vec<Bits> {
    items.iter().rev().cloned().collect()
}

/// Recursion on notation from the last bit of `x` towards the first, with
/// `step0` and `step1` taking the remaining suffix and the recursive result.
pub fn reference_prn(step0: &dyn Fn(&Bits, &Bits) -> Bits, step1: &dyn Fn(&Bits, &Bits) -> Bits, a: &Bits, x: &Bits) -> Bits {
    let mut acc = a.clone();
    let s = x.as_slice();
    for i in (0..s.len()).rev() {
        let rest = Bits::from_vec(s[i + 1..].to_vec());
        acc = if s[i] == 0 { step0(&rest, &acc) } else { step1(&rest, &acc) };
    }
    acc
}

/// All bit strings of length at most `n`, shortest first.
pub fn strings_up_to(n: usize) -> Vec<Bits> {
    let mut out = vec![Bits::empty()];
    let mut layer = vec![Bits::empty()];
    for _ in 0..n {
        layer = layer.iter().flat_map(|w| [w.push_back(0), w.push_back(1)]).collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Every list of at most `max_len` items drawn from `alphabet`.
pub fn lists_up_to(alphabet: &[Bits], max_len: usize) -> Vec<Vec<Bits>> {
    let mut out = vec![Vec::new()];
    let mut layer: Vec<Vec<Bits>> = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|l| alphabet.iter().map(move |w| {
                let mut l2 = l.clone();
                l2.push(w.clone());
                l2
            }))
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Substitutes closed top-level declarations into the rest of the program,
/// so recursions defined later no longer refer to helpers by name.
pub fn inline_declarations(t: &TermRef) -> TermRef {
    let mut cur = t.clone();
    loop {
        let next = match &cur.kind {
            TermKind::App(f, a) if a.free_vars().is_empty() => match &f.kind {
                TermKind::Lambda(x, _, body) => subst(body, x, a),
                _ => return cur,
            },
            _ => return cur,
        };
        cur = next;
    }
}

/// The first recursion in `t` whose recursive variable is `fname`.
pub fn find_crec(t: &TermRef, fname: &str) -> Option<TermRef> {
    if let TermKind::Crec(c) = &t.kind {
        if &*c.split().0 == fname {
            return Some(t.clone());
        }
    }
    t.children().into_iter().find_map(|c| find_crec(c, fname))
}

pub fn builtin_step(b: Builtin) -> Rc<dyn Fn(&Bits, &Bits) -> Bits> {
    Rc::new(move |x: &Bits, acc: &Bits| b.run(&[x.clone(), acc.clone()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::evaluate_applied;
    use proptest::prelude::*;

    fn b(s: &str) -> Bits {
        Bits::parse(s).unwrap()
    }

    fn run(p: &CorpusProgram, args: &[Bits]) -> Bits {
        let r = evaluate_applied(&p.term, args, &p.oracles, None).unwrap();
        r.value.as_bits().unwrap().clone()
    }

    #[test]
    fn encoding_examples() {
        assert_eq!(encode_list(&[b("0"), b("1")]), b("100110"));
        assert_eq!(encode_list(&[]), Bits::empty());
        assert_eq!(decode_list(&b("10110")).unwrap(), vec![b("01")]);
        assert!(decode_list(&b("1")).is_err());
        assert!(decode_list(&b("101")).is_err());
    }

    #[test]
    fn every_program_typechecks_at_its_annotation() {
        for p in corpus_programs().unwrap() {
            if let Some(ann) = p.surface.main_annotation() {
                assert_eq!(&p.ty, ann, "{}", p.name);
            }
        }
    }

    #[test]
    fn ins_sort_example() {
        let p = corpus_program("ins_sort").unwrap();
        let out = run(&p, &[encode_list(&[b("11"), b("01"), b("10")])]);
        assert_eq!(decode_list(&out).unwrap(), vec![b("01"), b("10"), b("11")]);
    }

    #[test]
    fn head_and_tail_example() {
        let l = encode_list(&[b("01"), b("1")]);
        assert_eq!(run(&corpus_program("head").unwrap(), &[l.clone()]), b("01"));
        assert_eq!(decode_list(&run(&corpus_program("tail").unwrap(), &[l])).unwrap(), vec![b("1")]);
    }

    #[test]
    fn cons_prepends() {
        let p = corpus_program("cons").unwrap();
        let out = run(&p, &[b("10"), encode_list(&[b(""), b("1")])]);
        assert_eq!(decode_list(&out).unwrap(), vec![b("10"), b(""), b("1")]);
    }

    #[test]
    fn leq_agrees_with_integer_order() {
        let p = corpus_program("leq").unwrap();
        let ws = strings_up_to(6);
        for x in &ws {
            for y in &ws {
                let ix = x.as_slice().iter().fold(0u64, |n, &bit| 2 * n + bit as u64);
                let iy = y.as_slice().iter().fold(0u64, |n, &bit| 2 * n + bit as u64);
                assert_eq!(!run(&p, &[x.clone(), y.clone()]).is_empty(), ix <= iy, "{} <= {}", x, y);
            }
        }
    }

    #[test]
    fn sorts_agree_on_small_lists() {
        let ins = corpus_program("ins_sort").unwrap();
        let sel = corpus_program("sel_sort").unwrap();
        for l in lists_up_to(&strings_up_to(2), 3) {
            let want = reference_sort(&l);
            let e = encode_list(&l);
            assert_eq!(decode_list(&run(&ins, &[e.clone()])).unwrap(), want, "ins_sort {:?}", l);
            assert_eq!(decode_list(&run(&sel, &[e])).unwrap(), want, "sel_sort {:?}", l);
        }
    }

    #[test]
    fn reverse_reverses() {
        let p = corpus_program("reverse").unwrap();
        for l in lists_up_to(&strings_up_to(1), 4) {
            assert_eq!(decode_list(&run(&p, &[encode_list(&l)])).unwrap(), reference_reverse(&l));
        }
    }

    #[test]
    fn prn_matches_recursion_on_bits() {
        let p = corpus_program("prn").unwrap();
        let s0 = builtin_step(Builtin::Identity);
        let s1 = builtin_step(Builtin::AppendBit);
        for a in strings_up_to(2) {
            for x in strings_up_to(4) {
                assert_eq!(run(&p, &[a.clone(), x.clone()]), reference_prn(&*s0, &*s1, &a, &x), "a={} x={}", a, x);
            }
        }
    }

    #[test]
    fn reverse_recursion_is_closed_after_inlining() {
        let p = corpus_program("reverse").unwrap();
        let r = find_crec(&inline_declarations(&p.term), "r").unwrap();
        assert!(r.free_vars().is_empty());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(items in prop::collection::vec(prop::collection::vec(0u8..2, 0..6), 0..8)) {
            let items: Vec<Bits> = items.into_iter().map(Bits::from_vec).collect();
            prop_assert_eq!(decode_list(&encode_list(&items)).unwrap(), items);
        }
    }
}
