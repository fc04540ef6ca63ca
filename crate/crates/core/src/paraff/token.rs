use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

/// Part-of-speech class of a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenGroup {
    Special,
    Staff,
    Clef,
    Key,
    TimeNum,
    TimeDen,
    Pitch,
    Accidental,
    Octave,
    Duration,
    Dot,
    Beam,
    Rest,
    Warp,
    Expressive,
}

impl TokenGroup {
    pub const ALL: [TokenGroup; 15] = [
        TokenGroup::Special,
        TokenGroup::Staff,
        TokenGroup::Clef,
        TokenGroup::Key,
        TokenGroup::TimeNum,
        TokenGroup::TimeDen,
        TokenGroup::Pitch,
        TokenGroup::Accidental,
        TokenGroup::Octave,
        TokenGroup::Duration,
        TokenGroup::Dot,
        TokenGroup::Beam,
        TokenGroup::Rest,
        TokenGroup::Warp,
        TokenGroup::Expressive,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Clef {
    G,
    F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Accidental {
    Sharp,
    Flat,
    DoubleSharp,
    DoubleFlat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Expressive {
    SlurLeft,
    SlurRight,
    Tie,
    Arpeggio,
}

/// One vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Pad,
    Bom,
    Eom,
    Vb,
    /// Staff number, 1-based from the top.
    Staff(u8),
    Clef(Clef),
    /// Sharps when positive, flats when negative.
    Key(i8),
    TimeNum(u8),
    TimeDen(u8),
    /// Scale step from c: c=0 .. b=6.
    Pitch(u8),
    Accidental(Accidental),
    /// +1 for `Osup`, -1 for `Osub`.
    Octave(i8),
    /// Division exponent: `D1` is 0, `D64` is 6.
    Duration(u8),
    Dot,
    BeamLeft,
    BeamRight,
    Rest,
    Space,
    /// Tuplet opener `Wn`.
    Warp(u8),
    WarpContinue,
    WarpClose,
    Expressive(Expressive),
}

pub const MAX_TIME_NUM: u8 = 12;
pub const TIME_DENS: [u8; 3] = [2, 4, 8];
const PITCH_LETTERS: [char; 7] = ['c', 'd', 'e', 'f', 'g', 'a', 'b'];

/// Full vocabulary in id order.
pub fn vocabulary() -> &'static [Token] {
    static VOCAB: OnceLock<Vec<Token>> = OnceLock::new();
    VOCAB.get_or_init(|| {
        use Token::*;
        let mut v = vec![Pad, Bom, Eom, Vb];
        v.extend((1..=3).map(Staff));
        v.extend([Clef(self::Clef::G), Clef(self::Clef::F)]);
        v.extend((0..=6).map(Key));
        v.extend((1..=6).map(|k| Key(-k)));
        v.extend((1..=MAX_TIME_NUM).map(TimeNum));
        v.extend(TIME_DENS.map(TimeDen));
        // a b c d e f g
        v.extend([5, 6, 0, 1, 2, 3, 4].map(Pitch));
        v.extend(
            [
                self::Accidental::Sharp,
                self::Accidental::Flat,
                self::Accidental::DoubleSharp,
                self::Accidental::DoubleFlat,
            ]
            .map(Accidental),
        );
        v.extend([Octave(1), Octave(-1)]);
        v.extend((0..=6).map(Duration));
        v.push(Dot);
        v.extend([BeamLeft, BeamRight, Rest, Space]);
        v.extend((2..=16).map(Warp));
        v.extend([WarpContinue, WarpClose]);
        v.extend(
            [
                self::Expressive::SlurLeft,
                self::Expressive::SlurRight,
                self::Expressive::Tie,
                self::Expressive::Arpeggio,
            ]
            .map(Expressive),
        );
        v
    })
}

impl Token {
    pub fn group(self) -> TokenGroup {
        use Token::*;
        match self {
            Pad | Bom | Eom | Vb => TokenGroup::Special,
            Staff(_) => TokenGroup::Staff,
            Clef(_) => TokenGroup::Clef,
            Key(_) => TokenGroup::Key,
            TimeNum(_) => TokenGroup::TimeNum,
            TimeDen(_) => TokenGroup::TimeDen,
            Pitch(_) => TokenGroup::Pitch,
            Accidental(_) => TokenGroup::Accidental,
            Octave(_) => TokenGroup::Octave,
            Duration(_) => TokenGroup::Duration,
            Dot => TokenGroup::Dot,
            BeamLeft | BeamRight => TokenGroup::Beam,
            Rest | Space => TokenGroup::Rest,
            Warp(_) | WarpContinue | WarpClose => TokenGroup::Warp,
            Expressive(_) => TokenGroup::Expressive,
        }
    }

    /// Position in [`vocabulary`].
    pub fn id(self) -> usize {
        static IDS: OnceLock<HashMap<Token, usize>> = OnceLock::new();
        let ids = IDS.get_or_init(|| vocabulary().iter().enumerate().map(|(i, &t)| (t, i)).collect());
        *ids.get(&self).expect("token outside the vocabulary")
    }

    pub fn is_post_event(self) -> bool {
        matches!(self.group(), TokenGroup::Beam | TokenGroup::Rest | TokenGroup::Expressive)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Token::*;
        match *self {
            Pad => f.write_str("PAD"),
            Bom => f.write_str("BOM"),
            Eom => f.write_str("EOM"),
            Vb => f.write_str("VB"),
            Staff(n) => write!(f, "S{n}"),
            Clef(self::Clef::G) => f.write_str("Cg"),
            Clef(self::Clef::F) => f.write_str("Cf"),
            Key(k) if k < 0 => write!(f, "K_{}", -k),
            Key(k) => write!(f, "K{k}"),
            TimeNum(n) => write!(f, "TN{n}"),
            TimeDen(n) => write!(f, "TD{n}"),
            Pitch(p) => write!(f, "{}", PITCH_LETTERS[p as usize]),
            Accidental(a) => f.write_str(match a {
                self::Accidental::Sharp => "As",
                self::Accidental::Flat => "Af",
                self::Accidental::DoubleSharp => "Ass",
                self::Accidental::DoubleFlat => "Aff",
            }),
            Octave(o) => f.write_str(if o > 0 { "Osup" } else { "Osub" }),
            Duration(d) => write!(f, "D{}", 1u32 << d),
            Dot => f.write_str("Dot"),
            BeamLeft => f.write_str("Bl"),
            BeamRight => f.write_str("Br"),
            Rest => f.write_str("Rest"),
            Space => f.write_str("RSpace"),
            Warp(n) => write!(f, "W{n}"),
            WarpContinue => f.write_str("W"),
            WarpClose => f.write_str("Wx"),
            Expressive(e) => f.write_str(match e {
                self::Expressive::SlurLeft => "EslurL",
                self::Expressive::SlurRight => "EslurR",
                self::Expressive::Tie => "Etie",
                self::Expressive::Arpeggio => "Earp",
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown lexeme {lexeme:?} at token {position}")]
pub struct LexError {
    pub position: usize,
    pub lexeme: String,
}

impl FromStr for Token {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        static LEXEMES: OnceLock<HashMap<String, Token>> = OnceLock::new();
        let map = LEXEMES.get_or_init(|| vocabulary().iter().map(|&t| (t.to_string(), t)).collect());
        map.get(s).copied().ok_or(())
    }
}

/// Split on whitespace and map each lexeme onto the vocabulary.
pub fn tokenize(text: &str) -> Result<Vec<Token>, LexError> {
    text.split_whitespace()
        .enumerate()
        .map(|(position, lexeme)| lexeme.parse().map_err(|_| LexError { position, lexeme: lexeme.to_string() }))
        .collect()
}

/// Space-joined lexemes.
pub fn render(tokens: &[Token]) -> String {
    tokens.iter().map(Token::to_string).collect::<Vec<_>>().join(" ")
}
