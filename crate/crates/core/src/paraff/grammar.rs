use std::collections::{BTreeSet, VecDeque};
use std::sync::OnceLock;

use serde::Serialize;

use super::token::{vocabulary, Accidental, Clef, Token, TokenGroup};

/// Position of the incremental recognizer inside a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GrammarState {
    /// Nothing read yet; only `BOM` fits.
    Start,
    /// Between terms. `pending` marks octave tokens waiting for a pitch.
    Boundary { pending: bool },
    /// After `TNn`; a `TDn` must follow.
    TimeNum { pending: bool },
    /// Inside the pitch list of an event.
    Pitch { accidental_ok: bool },
    /// After a warp token; the duration must follow.
    Warp,
    /// After the duration or a dot.
    Duration,
    /// After a post-event marker.
    Post,
    /// After `EOM`.
    End,
}

impl GrammarState {
    /// State after reading `token`, or `None` if the grammar forbids it.
    pub fn push(self, token: Token) -> Option<GrammarState> {
        use GrammarState::*;
        use TokenGroup as G;
        let g = token.group();
        let boundary = |pending: bool| -> Option<GrammarState> {
            match (g, token) {
                (G::Staff | G::Clef | G::Key, _) => Some(Boundary { pending }),
                (G::TimeNum, _) => Some(TimeNum { pending }),
                (G::Pitch, _) => Some(Pitch { accidental_ok: true }),
                (G::Octave, _) => Some(Boundary { pending: true }),
                (_, Token::Vb) if !pending => Some(Boundary { pending: false }),
                (_, Token::Eom) if !pending => Some(End),
                _ => None,
            }
        };
        match self {
            Start => (token == Token::Bom).then_some(Boundary { pending: false }),
            Boundary { pending } => boundary(pending),
            TimeNum { pending } => (g == G::TimeDen).then_some(Boundary { pending }),
            Pitch { accidental_ok } => match g {
                G::Pitch => Some(Pitch { accidental_ok: true }),
                G::Accidental if accidental_ok => Some(Pitch { accidental_ok: false }),
                G::Octave => Some(Pitch { accidental_ok: false }),
                G::Warp => Some(Warp),
                G::Duration => Some(Duration),
                _ => None,
            },
            Warp => (g == G::Duration).then_some(Duration),
            Duration | Post => match g {
                G::Dot if self == Duration => Some(Duration),
                _ if token.is_post_event() => Some(Post),
                _ => boundary(false),
            },
            End => None,
        }
    }

    pub fn is_final(self) -> bool {
        self == GrammarState::End
    }
}

/// One pitch of a chord.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PitchTerm {
    /// Scale step from c (c=0 .. b=6).
    pub step: u8,
    #[serde(skip)]
    pub accidental: Option<Accidental>,
    /// Net octave shift, including any prefix read before the pitch.
    pub octave: i8,
}

/// `pitch+ [warp] Dn Dot* post*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EventTerm {
    pub pitches: Vec<PitchTerm>,
    #[serde(serialize_with = "as_lexeme_opt")]
    pub warp: Option<Token>,
    pub division: u8,
    pub dots: u8,
    #[serde(serialize_with = "as_lexemes")]
    pub post: Vec<Token>,
}

impl EventTerm {
    pub fn has(&self, token: Token) -> bool {
        self.post.contains(&token)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Term {
    Context(#[serde(serialize_with = "as_lexeme")] Token),
    Event(EventTerm),
}

/// Measure-wide context taken from the first occurrence of each kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MeasureContext {
    pub key: Option<i8>,
    pub time: Option<(u32, u32)>,
    /// 0-based staff index.
    pub staff: Option<u32>,
    #[serde(skip)]
    pub clef: Option<Clef>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MeasureAst {
    pub context: MeasureContext,
    pub voices: Vec<Vec<Term>>,
}

impl MeasureAst {
    pub fn events(&self) -> impl Iterator<Item = &EventTerm> {
        self.voices.iter().flatten().filter_map(|t| match t {
            Term::Event(e) => Some(e),
            Term::Context(_) => None,
        })
    }
}

fn as_lexeme<S: serde::Serializer>(t: &Token, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(t)
}

fn as_lexeme_opt<S: serde::Serializer>(t: &Option<Token>, s: S) -> Result<S::Ok, S::Error> {
    match t {
        Some(t) => s.collect_str(t),
        None => s.serialize_none(),
    }
}

fn as_lexemes<S: serde::Serializer>(ts: &[Token], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(ts.iter().map(Token::to_string))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GrammarError {
    #[error("token {position} ({token}) is not allowed here")]
    Unexpected { position: usize, token: Token },
    #[error("sentence ends before EOM")]
    Truncated,
    #[error("tokens after EOM at {0}")]
    Trailing(usize),
}

fn push_term(ast: &mut MeasureAst, term: Term) {
    ast.voices.last_mut().expect("at least one voice").push(term);
}

/// Parse one measure sentence.
pub fn parse(tokens: &[Token]) -> Result<MeasureAst, GrammarError> {
    let mut state = GrammarState::Start;
    let mut ast = MeasureAst { context: MeasureContext::default(), voices: vec![Vec::new()] };
    let mut pending_octave = 0i8;
    let mut event: Option<EventTerm> = None;
    let mut time_num: Option<u32> = None;

    for (position, &token) in tokens.iter().enumerate() {
        if state.is_final() {
            return Err(GrammarError::Trailing(position));
        }
        let next = state.push(token).ok_or(GrammarError::Unexpected { position, token })?;
        let closes_event = matches!(state, GrammarState::Duration | GrammarState::Post)
            && !matches!(next, GrammarState::Duration | GrammarState::Post);
        if closes_event {
            if let Some(e) = event.take() {
                push_term(&mut ast, Term::Event(e));
            }
        }
        match token {
            Token::Vb => ast.voices.push(Vec::new()),
            Token::Staff(n) => {
                ast.context.staff.get_or_insert(n as u32 - 1);
                push_term(&mut ast, Term::Context(token));
            }
            Token::Clef(c) => {
                ast.context.clef.get_or_insert(c);
                push_term(&mut ast, Term::Context(token));
            }
            Token::Key(k) => {
                ast.context.key.get_or_insert(k);
                push_term(&mut ast, Term::Context(token));
            }
            Token::TimeNum(n) => {
                time_num = Some(n as u32);
                push_term(&mut ast, Term::Context(token));
            }
            Token::TimeDen(d) => {
                if let (None, Some(n)) = (ast.context.time, time_num) {
                    ast.context.time = Some((n, d as u32));
                }
                push_term(&mut ast, Term::Context(token));
            }
            Token::Octave(o) => match event.as_mut().and_then(|e| e.pitches.last_mut()) {
                Some(p) if matches!(state, GrammarState::Pitch { .. }) => p.octave += o,
                _ => pending_octave += o,
            },
            Token::Pitch(step) => {
                let e = event.get_or_insert_with(|| EventTerm {
                    pitches: Vec::new(),
                    warp: None,
                    division: 0,
                    dots: 0,
                    post: Vec::new(),
                });
                e.pitches.push(PitchTerm { step, accidental: None, octave: pending_octave });
                pending_octave = 0;
            }
            Token::Accidental(a) => {
                if let Some(p) = event.as_mut().and_then(|e| e.pitches.last_mut()) {
                    p.accidental = Some(a);
                }
            }
            Token::Warp(_) | Token::WarpContinue | Token::WarpClose => {
                if let Some(e) = event.as_mut() {
                    e.warp = Some(token);
                }
            }
            Token::Duration(d) => {
                if let Some(e) = event.as_mut() {
                    e.division = d;
                }
            }
            Token::Dot => {
                if let Some(e) = event.as_mut() {
                    e.dots += 1;
                }
            }
            t if t.is_post_event() => {
                if let Some(e) = event.as_mut() {
                    e.post.push(t);
                }
            }
            _ => {}
        }
        state = next;
    }
    if !state.is_final() {
        return Err(GrammarError::Truncated);
    }
    Ok(ast)
}

/// Token-group transition matrix, indexed `[prev][next]` by [`TokenGroup::index`].
pub type TransitionMatrix = [[bool; 15]; 15];

/// Matrix implied by the grammar: `T[a][b]` is set when some reachable state
/// accepts a token of group `a` followed by one of group `b`.
pub fn derive_transitions() -> TransitionMatrix {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([GrammarState::Start]);
    let mut t = [[false; 15]; 15];
    while let Some(s) = queue.pop_front() {
        if !seen.insert(s) {
            continue;
        }
        for &a in vocabulary() {
            let Some(next) = s.push(a) else { continue };
            for &b in vocabulary() {
                if next.push(b).is_some() {
                    t[a.group().index()][b.group().index()] = true;
                }
            }
            queue.push_back(next);
        }
    }
    t
}

const SHIPPED: &str = include_str!("transitions.txt");

/// Parse the shipped matrix file: a header row of group names, then one row
/// per group with its name and 0/1 cells.
pub fn parse_transitions(text: &str) -> Result<TransitionMatrix, String> {
    let mut rows = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = rows.next().ok_or("empty matrix")?.split_whitespace().collect();
    let names: Vec<String> = TokenGroup::ALL.iter().map(|g| format!("{g:?}")).collect();
    if header != names {
        return Err(format!("header {header:?} does not list the groups in order"));
    }
    let mut t = [[false; 15]; 15];
    for (i, name) in names.iter().enumerate() {
        let row = rows.next().ok_or_else(|| format!("missing row {name}"))?;
        let mut cells = row.split_whitespace();
        if cells.next() != Some(name.as_str()) {
            return Err(format!("row {i} should start with {name}"));
        }
        for (j, c) in cells.enumerate() {
            match (j, c) {
                (j, "1") if j < 15 => t[i][j] = true,
                (j, "0") if j < 15 => {}
                _ => return Err(format!("row {name}: bad cell {c:?} at column {j}")),
            }
        }
    }
    Ok(t)
}

/// Render a matrix in the shipped file format.
pub fn format_transitions(t: &TransitionMatrix) -> String {
    let mut out = String::from("# rows: previous group, columns: next group\n");
    let names: Vec<String> = TokenGroup::ALL.iter().map(|g| format!("{g:?}")).collect();
    out.push_str(&names.join(" "));
    out.push('\n');
    for (i, name) in names.iter().enumerate() {
        out.push_str(name);
        for cell in t[i] {
            out.push_str(if cell { " 1" } else { " 0" });
        }
        out.push('\n');
    }
    out
}

pub fn transitions() -> &'static TransitionMatrix {
    static T: OnceLock<TransitionMatrix> = OnceLock::new();
    T.get_or_init(|| parse_transitions(SHIPPED).expect("shipped transition matrix is well formed"))
}

pub fn transition_allowed(prev: TokenGroup, next: TokenGroup) -> bool {
    transitions()[prev.index()][next.index()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paraff::token::tokenize;

    const COMPLEX: &str = "BOM K4 TN3 TD8 \
        S1 Cg f As Osup D32 Bl d As D32 b D32 g As D32 Br \
        S2 f As Osub D32 Bl d As D32 b D32 g As D32 Br \
        S1 d As Osup D32 Bl S2 g As D32 Osub S1 b D32 d As D32 Br VB \
        S2 Cf b D8 S1 d As Osup D8 EslurL f As D8 EslurR VB \
        S2 Cf b Osub d As D8 Bl b D8 b D8 Br EOM";

    fn events(voice: &[Term]) -> Vec<&EventTerm> {
        voice.iter().filter_map(|t| if let Term::Event(e) = t { Some(e) } else { None }).collect()
    }

    #[test]
    fn hello_world() {
        let ast = parse(&tokenize("BOM K0 TN4 TD4 S1 Cg c D1 EOM").unwrap()).unwrap();
        assert_eq!(ast.voices.len(), 1);
        let ev = events(&ast.voices[0]);
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].division, ev[0].dots), (0, 0));
        assert_eq!(ast.context.time, Some((4, 4)));
        assert_eq!(ast.context.key, Some(0));
        assert_eq!(ast.context.staff, Some(0));
    }

    #[test]
    fn cross_staff_example() {
        let ast = parse(&tokenize(COMPLEX).unwrap()).unwrap();
        assert_eq!(ast.voices.len(), 3);
        let counts: Vec<usize> = ast.voices.iter().map(|v| events(v).len()).collect();
        assert_eq!(counts, vec![12, 3, 3]);
        let staves: Vec<&Term> = ast.voices[0].iter().filter(|t| matches!(t, Term::Context(Token::Staff(_)))).collect();
        assert_eq!(staves.len(), 5);
        // the Osub before S1 lands on the following pitch
        assert_eq!(events(&ast.voices[0])[10].pitches[0].octave, -1);
        let chord = events(&ast.voices[2])[0];
        assert_eq!(chord.pitches.len(), 2);
        assert_eq!(chord.pitches[0].octave, -1);
        assert_eq!(ast.context.time, Some((3, 8)));
    }

    #[test]
    fn minimal_sentence() {
        let ast = parse(&tokenize("BOM EOM").unwrap()).unwrap();
        assert_eq!(ast.events().count(), 0);
    }

    #[test]
    fn grammar_violations() {
        let err = parse(&tokenize("BOM K0 Dot c D4 EOM").unwrap()).unwrap_err();
        assert_eq!(err, GrammarError::Unexpected { position: 2, token: Token::Dot });
        assert!(matches!(
            parse(&tokenize("BOM TN3 TN4 TD4 EOM").unwrap()),
            Err(GrammarError::Unexpected { position: 2, .. })
        ));
        assert!(matches!(parse(&tokenize("BOM c D4").unwrap()), Err(GrammarError::Truncated)));
        assert!(matches!(parse(&tokenize("BOM c D4 EOM VB").unwrap()), Err(GrammarError::Trailing(4))));
        assert!(parse(&tokenize("BOM c Osub EOM").unwrap()).is_err());
        assert!(parse(&tokenize("BOM Osub EOM").unwrap()).is_err());
        assert!(parse(&tokenize("BOM c Osup As D4 EOM").unwrap()).is_err());
    }

    #[test]
    fn event_fields() {
        let ast = parse(&tokenize("BOM c e g W3 D8 Dot Dot Bl Etie Rest EOM").unwrap()).unwrap();
        let e = ast.events().next().unwrap();
        assert_eq!(e.pitches.len(), 3);
        assert_eq!(e.warp, Some(Token::Warp(3)));
        assert_eq!((e.division, e.dots), (3, 2));
        assert_eq!(
            e.post,
            vec![Token::BeamLeft, Token::Expressive(crate::paraff::token::Expressive::Tie), Token::Rest]
        );
    }

    #[test]
    fn reference_transitions() {
        assert!(transition_allowed(TokenGroup::Key, TokenGroup::TimeNum));
        assert!(!transition_allowed(TokenGroup::TimeNum, TokenGroup::TimeNum));
        assert!(transition_allowed(TokenGroup::TimeNum, TokenGroup::TimeDen));
        assert!(transition_allowed(TokenGroup::TimeDen, TokenGroup::Staff));
    }

    #[test]
    fn shipped_matrix_matches_grammar() {
        let derived = derive_transitions();
        assert_eq!(
            transitions(),
            &derived,
            "transitions.txt is stale; regenerate with format_transitions:\n{}",
            format_transitions(&derived)
        );
        assert_eq!(parse_transitions(&format_transitions(&derived)).unwrap(), derived);
    }
}
