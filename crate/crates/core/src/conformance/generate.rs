use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{
    BehaviorDef, Cardinality, ChannelDef, FieldDef, FieldType, MessageTypeDef, ProcessModel,
    StateDef, StateKind, SubjectDef, TransitionDef, ValidModel,
};

const FIELD_TYPES: [FieldType; 4] = [
    FieldType::Text,
    FieldType::Int,
    FieldType::Dec,
    FieldType::Bool,
];
const LABEL_CHARS: &[char] = &[
    'a', 'b', 'k', 'Z', ' ', ' ', '0', '9', '_', '-', '"', '\\', '\t', '{', '#', 'é', 'ß', '→',
];

fn ident<R: Rng>(rng: &mut R, prefix: &str, n: usize) -> String {
    const TAIL: &[u8] = b"abcxyzABC_019";
    let mut s = format!("{prefix}{n}");
    for _ in 0..rng.gen_range(0..3) {
        s.push(*TAIL.choose(rng).expect("nonempty") as char);
    }
    s
}

fn label<R: Rng>(rng: &mut R) -> String {
    let len = rng.gen_range(0..12);
    (0..len)
        .map(|_| *LABEL_CHARS.choose(rng).expect("nonempty"))
        .collect()
}

fn duration<R: Rng>(rng: &mut R) -> u64 {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(1..5000),
        1 => rng.gen_range(1..120) * 1000,
        2 => rng.gen_range(1..90) * 60_000,
        _ => rng.gen_range(1..30) * 3_600_000,
    }
}

/// A random model that passes validation, built so that parsing its
/// canonical text gives it back unchanged.
pub fn random_model<R: Rng>(rng: &mut R) -> ValidModel {
    let n = rng.gen_range(0..100);
    let mut m = ProcessModel::new(ident(rng, "P", n));

    let internal = rng.gen_range(1..=4);
    for i in 0..internal {
        let name = ident(rng, "S", i);
        let mut s = if rng.gen_bool(0.3) {
            SubjectDef::multi(name, rng.gen_range(2..=5))
        } else {
            SubjectDef::single(name)
        };
        if rng.gen_bool(0.3) {
            s = s.at(["a", "b", "acme"]
                .choose(rng)
                .expect("nonempty")
                .to_string());
        }
        m.subjects.push(s);
    }
    for i in 0..rng.gen_range(0..=1) {
        m.subjects.push(SubjectDef::external(ident(rng, "X", i)));
    }
    m.subjects.shuffle(rng);

    for i in 0..rng.gen_range(1..=4) {
        let mut t = MessageTypeDef::new(ident(rng, "M", i));
        for f in 0..rng.gen_range(0..=3) {
            t.fields.push(FieldDef {
                name: ident(rng, "f", f),
                ty: *FIELD_TYPES.choose(rng).expect("nonempty"),
            });
        }
        m.message_types.push(t);
    }

    let names: Vec<String> = m.subjects.iter().map(|s| s.name.clone()).collect();
    let types: Vec<String> = m.message_types.iter().map(|t| t.name.clone()).collect();
    for from in &names {
        for to in &names {
            if from == to || !rng.gen_bool(0.5) {
                continue;
            }
            let n = rng.gen_range(1..=types.len());
            let carried: Vec<String> = types.choose_multiple(rng, n).cloned().collect();
            m.channels
                .push(ChannelDef::new(from.clone(), to.clone(), carried));
        }
    }

    let subjects = m.subjects.clone();
    for s in subjects.iter().filter(|s| !s.is_external()) {
        let b = random_behavior(rng, &m, &s.name);
        m.behaviors.push(b);
    }
    m.behaviors.shuffle(rng);
    m.into_valid()
        .unwrap_or_else(|r| panic!("generated model does not validate:\n{r}"))
}

fn random_behavior<R: Rng>(rng: &mut R, m: &ProcessModel, subject: &str) -> BehaviorDef {
    let outgoing: Vec<(&str, &str)> = m
        .channels
        .iter()
        .filter(|c| c.from == subject)
        .flat_map(|c| {
            c.message_types
                .iter()
                .map(move |t| (c.to.as_str(), t.as_str()))
        })
        .collect();
    let incoming: Vec<(&str, &str)> = m
        .channels
        .iter()
        .filter(|c| c.to == subject)
        .flat_map(|c| {
            c.message_types
                .iter()
                .map(move |t| (c.from.as_str(), t.as_str()))
        })
        .collect();

    let count = rng.gen_range(2..=7);
    let ends = rng.gen_range(1..=2.min(count - 1));
    let ids: Vec<String> = (0..count).map(|i| ident(rng, "st", i)).collect();
    let mut b = BehaviorDef::new(subject);
    for (i, id) in ids.iter().enumerate() {
        let is_end = i >= count - ends;
        let kind = if is_end {
            StateKind::Function
        } else {
            let mut kinds = vec![StateKind::Function];
            if !outgoing.is_empty() {
                kinds.push(StateKind::Send);
            }
            if !incoming.is_empty() {
                kinds.push(StateKind::Receive);
            }
            *kinds.choose(rng).expect("nonempty")
        };
        let mut state = StateDef::new(id.clone(), label(rng), kind);
        state.is_start = i == 0;
        state.is_end = is_end;
        b.states.push(state);
        if is_end {
            continue;
        }
        let target = |rng: &mut R| ids.choose(rng).expect("nonempty").clone();
        match kind {
            StateKind::Function => {
                let mut labels: Vec<String> = Vec::new();
                for _ in 0..rng.gen_range(1..=3) {
                    let l = label(rng);
                    if !labels.contains(&l) {
                        labels.push(l);
                    }
                }
                for l in labels {
                    let to = target(rng);
                    b.transitions.push(TransitionDef::branch(id, &l, &to));
                }
            }
            StateKind::Send => {
                let mut used: Vec<&str> = Vec::new();
                for _ in 0..rng.gen_range(1..=2) {
                    let (to, msg) = *outgoing.choose(rng).expect("nonempty");
                    if used.contains(&to) {
                        continue;
                    }
                    used.push(to);
                    let card = match m.subject(to) {
                        Some(s) if s.is_multi() => match rng.gen_range(0..3) {
                            0 => Cardinality::One,
                            1 => Cardinality::All,
                            _ => {
                                let min = rng.gen_range(1..=s.max_instances);
                                let max = rng.gen_range(min..=s.max_instances + 1);
                                Cardinality::Choose { min, max }
                            }
                        },
                        _ => Cardinality::One,
                    };
                    let next = target(rng);
                    b.transitions
                        .push(TransitionDef::send(id, msg, to, card, &next));
                }
            }
            StateKind::Receive => {
                let mut used: Vec<(&str, &str)> = Vec::new();
                for _ in 0..rng.gen_range(1..=3) {
                    let arm = *incoming.choose(rng).expect("nonempty");
                    if used.contains(&arm) {
                        continue;
                    }
                    used.push(arm);
                    let next = target(rng);
                    b.transitions
                        .push(TransitionDef::receive(id, arm.1, arm.0, &next));
                }
            }
        }
        if kind != StateKind::Function && rng.gen_bool(0.4) {
            let next = target(rng);
            b.transitions
                .push(TransitionDef::timeout(id, duration(rng), &next));
        }
    }
    b
}

/// Rewrites the layout of `source` without changing its meaning: every run
/// of whitespace outside string literals becomes random whitespace, now
/// and then with a comment in it.
pub fn scramble<R: Rng>(rng: &mut R, source: &str) -> String {
    let mut out = String::with_capacity(source.len() * 2);
    let mut chars = source.chars().peekable();
    let mut in_string = false;
    while let Some(c) = chars.next() {
        if in_string {
            out.push(c);
            match c {
                '\\' => out.extend(chars.next()),
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        if c == '"' {
            in_string = true;
            out.push(c);
            continue;
        }
        if !c.is_whitespace() {
            out.push(c);
            continue;
        }
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        for _ in 0..rng.gen_range(1..=3) {
            out.push(*[' ', ' ', '\n', '\t', '\r'].choose(rng).expect("nonempty"));
        }
        if rng.gen_bool(0.1) {
            out.push_str("# note \"}{ ->\n");
        }
    }
    out
}
