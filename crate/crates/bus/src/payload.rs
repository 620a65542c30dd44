/// On-wire representation of a payload value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum WireKind {
    U64 = 1,
    I64 = 2,
    F64 = 3,
    Str = 4,
    Bytes = 5,
    Bool = 6,
}

impl WireKind {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            1 => WireKind::U64,
            2 => WireKind::I64,
            3 => WireKind::F64,
            4 => WireKind::Str,
            5 => WireKind::Bytes,
            6 => WireKind::Bool,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    U64(u64),
    I64(i64),
    F64(f64),
    Str(String),
    Bytes(Vec<u8>),
    Bool(bool),
}

impl Value {
    pub fn kind(&self) -> WireKind {
        match self {
            Value::U64(_) => WireKind::U64,
            Value::I64(_) => WireKind::I64,
            Value::F64(_) => WireKind::F64,
            Value::Str(_) => WireKind::Str,
            Value::Bytes(_) => WireKind::Bytes,
            Value::Bool(_) => WireKind::Bool,
        }
    }
}

/// Ordered tagged fields. Tags unknown to the schema are kept as-is.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Payload {
    pub fields: Vec<(u16, Value)>,
}

impl Payload {
    pub fn new() -> Self {
        Payload::default()
    }

    pub fn with(mut self, tag: u16, value: Value) -> Self {
        self.set(tag, value);
        self
    }

    pub fn with_str(self, tag: u16, v: impl Into<String>) -> Self {
        self.with(tag, Value::Str(v.into()))
    }

    pub fn with_u64(self, tag: u16, v: u64) -> Self {
        self.with(tag, Value::U64(v))
    }

    pub fn with_f64(self, tag: u16, v: f64) -> Self {
        self.with(tag, Value::F64(v))
    }

    pub fn with_bool(self, tag: u16, v: bool) -> Self {
        self.with(tag, Value::Bool(v))
    }

    /// Replaces the first field with this tag, or appends.
    pub fn set(&mut self, tag: u16, value: Value) {
        match self.fields.iter_mut().find(|(t, _)| *t == tag) {
            Some(slot) => slot.1 = value,
            None => self.fields.push((tag, value)),
        }
    }

    pub fn get(&self, tag: u16) -> Option<&Value> {
        self.fields.iter().find(|(t, _)| *t == tag).map(|(_, v)| v)
    }

    pub fn str(&self, tag: u16) -> Option<&str> {
        match self.get(tag) {
            Some(Value::Str(s)) => Some(s),
            _ => None,
        }
    }

    pub fn u64(&self, tag: u16) -> Option<u64> {
        match self.get(tag) {
            Some(Value::U64(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn f64(&self, tag: u16) -> Option<f64> {
        match self.get(tag) {
            Some(Value::F64(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn bool(&self, tag: u16) -> Option<bool> {
        match self.get(tag) {
            Some(Value::Bool(v)) => Some(*v),
            _ => None,
        }
    }
}
