use crate::net::ObjectId;

/// A positional argument: a resident object or an inline literal.
#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Object(ObjectId),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Arg {
    pub fn is_literal(&self) -> bool {
        !matches!(self, Arg::Object(_))
    }
}

/// A named operation forwarded down a chain or executed on a worker.
/// Tensors travel by id; only scalars and short strings are inlined.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub name: String,
    pub args: Vec<Arg>,
    pub kwargs: Vec<(String, Arg)>,
    /// Where the worker stores the result.
    pub result_id: ObjectId,
}

impl Command {
    pub fn new(name: impl Into<String>, result_id: ObjectId) -> Self {
        Command {
            name: name.into(),
            args: Vec::new(),
            kwargs: Vec::new(),
            result_id,
        }
    }

    pub fn arg(mut self, a: Arg) -> Self {
        self.args.push(a);
        self
    }

    pub fn object(self, id: ObjectId) -> Self {
        self.arg(Arg::Object(id))
    }

    pub fn kwarg(mut self, key: impl Into<String>, value: Arg) -> Self {
        debug_assert!(value.is_literal(), "kwargs carry literals only");
        self.kwargs.push((key.into(), value));
        self
    }

    pub fn get_kwarg(&self, key: &str) -> Option<&Arg> {
        self.kwargs.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn object_args(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.args.iter().filter_map(|a| match a {
            Arg::Object(id) => Some(*id),
            _ => None,
        })
    }
}
