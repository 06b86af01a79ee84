use std::any::Any;
use std::fmt;

/// Index of a worker task; worker 0 is the master.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WorkerId(pub usize);

impl WorkerId {
    pub const MASTER: WorkerId = WorkerId(0);

    pub fn index(self) -> usize {
        self.0
    }

    pub fn is_master(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "worker {}", self.0)
    }
}

/// Message kinds. The discriminant is the tag byte on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Tag {
    InitData = 0,
    ActivationBroadcast = 1,
    PartialActivation = 2,
    ErrorBroadcast = 3,
    PartialError = 4,
    GradPush = 5,
    ParamPull = 6,
    ParamState = 7,
    Shutdown = 8,
}

impl Tag {
    pub const ALL: [Tag; 9] = [
        Tag::InitData,
        Tag::ActivationBroadcast,
        Tag::PartialActivation,
        Tag::ErrorBroadcast,
        Tag::PartialError,
        Tag::GradPush,
        Tag::ParamPull,
        Tag::ParamState,
        Tag::Shutdown,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Tag> {
        Tag::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::InitData => "InitData",
            Tag::ActivationBroadcast => "ActivationBroadcast",
            Tag::PartialActivation => "PartialActivation",
            Tag::ErrorBroadcast => "ErrorBroadcast",
            Tag::PartialError => "PartialError",
            Tag::GradPush => "GradPush",
            Tag::ParamPull => "ParamPull",
            Tag::ParamState => "ParamState",
            Tag::Shutdown => "Shutdown",
        }
    }
}

/// A counted data message. One payload element is one data unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub tag: Tag,
    pub layer: u16,
    pub sender: WorkerId,
    pub payload: Vec<f64>,
}

impl Message {
    pub fn new(tag: Tag, layer: usize, sender: WorkerId, payload: Vec<f64>) -> Self {
        Self {
            tag,
            layer: u16::try_from(layer).expect("layer index fits the wire format"),
            sender,
            payload,
        }
    }
}

/// What travels through an endpoint: protocol data (counted) or
/// orchestration commands between an engine and its tasks (not counted).
pub enum Envelope {
    Data(Message),
    Control {
        sender: WorkerId,
        body: Box<dyn Any + Send>,
    },
}

impl Envelope {
    pub fn sender(&self) -> WorkerId {
        match self {
            Envelope::Data(m) => m.sender,
            Envelope::Control { sender, .. } => *sender,
        }
    }

    pub(crate) fn describe(&self) -> String {
        match self {
            Envelope::Data(m) => format!("{}[{}]", m.tag.name(), m.layer),
            Envelope::Control { .. } => "Control".to_string(),
        }
    }
}

impl fmt::Debug for Envelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Envelope::Data(m) => f.debug_tuple("Data").field(m).finish(),
            Envelope::Control { sender, .. } => {
                f.debug_struct("Control").field("sender", sender).finish_non_exhaustive()
            }
        }
    }
}
