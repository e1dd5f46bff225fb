//! Trace records and their line format.
//!
//! One record per line, `key=value` fields separated by single spaces, with
//! a fixed field order per event kind. Message fields always appear in the
//! order kind, sender, transport, instance, round, sn, value, psize, with
//! `-` for an absent field. `vrnd` follows `psize` so PHASE 1B replies can
//! be checked offline.
//!
//! ```text
//! t=3 ev=send mid=7 cause=6 kind=PHASE2A sender=1 transport=u:2 instance=1 round=1.1 sn=- value=r0.1 psize=0 vrnd=- bytes=128
//! t=4 ev=recv mid=7 to=2 kind=PHASE2A bytes=128
//! t=4 ev=persist node=2 kind=acc i=1 rnd=1.1 vrnd=1.1 vval=r0.1 sn=1
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::ParseError;
use crate::storage::RecordKind;
use crate::types::{
    InstanceId, LanId, Message, MessageKind, NodeId, RequestId, Round, Tick, Transport, Value,
};

/// The message fields a trace keeps: everything except payload bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageSummary {
    pub kind: MessageKind,
    pub sender: NodeId,
    pub transport: Transport,
    pub instance: Option<InstanceId>,
    pub round: Option<Round>,
    pub sn: Option<u32>,
    pub value: Option<Value>,
    pub psize: u64,
    pub vrnd: Option<Round>,
}

impl From<&Message> for MessageSummary {
    fn from(m: &Message) -> Self {
        MessageSummary {
            kind: m.kind(),
            sender: m.sender,
            transport: m.transport,
            instance: m.instance(),
            round: m.round(),
            sn: m.sn(),
            value: m.value(),
            psize: m.payload_size(),
            vrnd: m.vrnd(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    Loss,
    Crashed,
    Isolated,
}

impl DropReason {
    fn as_str(self) -> &'static str {
        match self {
            DropReason::Loss => "loss",
            DropReason::Crashed => "crashed",
            DropReason::Isolated => "isolated",
        }
    }
}

impl FromStr for DropReason {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loss" => Ok(DropReason::Loss),
            "crashed" => Ok(DropReason::Crashed),
            "isolated" => Ok(DropReason::Isolated),
            _ => Err(ParseError::field("drop reason", s)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Send {
        mid: u64,
        cause: Option<u64>,
        msg: MessageSummary,
        bytes: u64,
    },
    Recv {
        mid: u64,
        to: NodeId,
        kind: MessageKind,
        bytes: u64,
    },
    Drop {
        mid: u64,
        to: NodeId,
        reason: DropReason,
    },
    Persist {
        node: NodeId,
        record: RecordKind,
    },
    Exec {
        node: NodeId,
        inc: u32,
        instance: InstanceId,
        value: Value,
        reqs: Vec<RequestId>,
    },
    Submit {
        client: NodeId,
        id: RequestId,
        psize: u64,
    },
    Reply {
        client: NodeId,
        id: RequestId,
    },
    Crash {
        node: NodeId,
    },
    Restart {
        node: NodeId,
        inc: u32,
    },
    View {
        number: u64,
        leader: NodeId,
        lsn: Round,
        highest: Option<InstanceId>,
        ring: Vec<NodeId>,
    },
    Lans {
        owners: Vec<(LanId, NodeId)>,
    },
    Install {
        node: NodeId,
        lsn: Round,
    },
    LeadershipLost {
        node: NodeId,
        round: Round,
    },
    ViewChangeRequested {
        node: NodeId,
        round: Round,
    },
    Distance {
        node: NodeId,
        d: u32,
    },
    ProtocolError {
        node: NodeId,
        detail: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub tick: Tick,
    pub event: Event,
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), T::to_string)
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    if xs.is_empty() {
        return "-".to_string();
    }
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl fmt::Display for MessageSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "kind={} sender={} transport={} instance={} round={} sn={} value={} psize={} vrnd={}",
            self.kind,
            self.sender,
            self.transport,
            opt(&self.instance),
            opt(&self.round),
            opt(&self.sn),
            opt(&self.value),
            self.psize,
            opt(&self.vrnd)
        )
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} ", self.tick)?;
        match &self.event {
            Event::Send {
                mid,
                cause,
                msg,
                bytes,
            } => write!(f, "ev=send mid={mid} cause={} {msg} bytes={bytes}", opt(cause)),
            Event::Recv {
                mid,
                to,
                kind,
                bytes,
            } => write!(f, "ev=recv mid={mid} to={to} kind={kind} bytes={bytes}"),
            Event::Drop { mid, to, reason } => {
                write!(f, "ev=drop mid={mid} to={to} reason={}", reason.as_str())
            }
            Event::Persist { node, record } => write!(f, "ev=persist node={node} {record}"),
            Event::Exec {
                node,
                inc,
                instance,
                value,
                reqs,
            } => write!(
                f,
                "ev=exec node={node} inc={inc} i={instance} value={value} reqs={}",
                join(reqs)
            ),
            Event::Submit { client, id, psize } => {
                write!(f, "ev=submit client={client} id={id} psize={psize}")
            }
            Event::Reply { client, id } => write!(f, "ev=reply client={client} id={id}"),
            Event::Crash { node } => write!(f, "ev=crash node={node}"),
            Event::Restart { node, inc } => write!(f, "ev=restart node={node} inc={inc}"),
            Event::View {
                number,
                leader,
                lsn,
                highest,
                ring,
            } => write!(
                f,
                "ev=view number={number} leader={leader} lsn={lsn} I={} ring={}",
                opt(highest),
                join(ring)
            ),
            Event::Lans { owners } => {
                let s: Vec<String> = owners.iter().map(|(l, n)| format!("{l}:{n}")).collect();
                write!(f, "ev=lans owners={}", join(&s))
            }
            Event::Install { node, lsn } => write!(f, "ev=install node={node} lsn={lsn}"),
            Event::LeadershipLost { node, round } => {
                write!(f, "ev=leadership-lost node={node} round={round}")
            }
            Event::ViewChangeRequested { node, round } => {
                write!(f, "ev=view-change-requested node={node} round={round}")
            }
            Event::Distance { node, d } => write!(f, "ev=distance node={node} d={d}"),
            Event::ProtocolError { node, detail } => {
                write!(f, "ev=protocol-error node={node} detail={detail}")
            }
        }
    }
}

/// Ordered `key=value` fields of one line. `detail` swallows the rest of
/// the line.
struct Fields<'a> {
    items: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn parse(line: &'a str) -> Result<Self, ParseError> {
        let mut items = Vec::new();
        let mut rest = line;
        while !rest.is_empty() {
            let (tok, tail) = match rest.split_once(' ') {
                Some((a, b)) => (a, b),
                None => (rest, ""),
            };
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| ParseError::field("field", tok))?;
            if k == "detail" {
                let start = rest.find('=').unwrap() + 1;
                items.push((k, &rest[start..]));
                break;
            }
            items.push((k, v));
            rest = tail;
        }
        Ok(Fields { items })
    }

    fn get(&self, key: &'static str) -> Result<&'a str, ParseError> {
        self.items
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or(ParseError::Missing(key))
    }

    fn parse_as<T: FromStr>(&self, key: &'static str) -> Result<T, ParseError> {
        let s = self.get(key)?;
        s.parse().map_err(|_| ParseError::field(key, s))
    }

    fn opt_as<T: FromStr>(&self, key: &'static str) -> Result<Option<T>, ParseError> {
        match self.get(key)? {
            "-" => Ok(None),
            s => s.parse().map(Some).map_err(|_| ParseError::field(key, s)),
        }
    }

    fn list_as<T: FromStr>(&self, key: &'static str) -> Result<Vec<T>, ParseError> {
        match self.get(key)? {
            "-" => Ok(Vec::new()),
            s => s
                .split(',')
                .map(|x| x.parse().map_err(|_| ParseError::field(key, x)))
                .collect(),
        }
    }
}

fn parse_record_kind(f: &Fields) -> Result<RecordKind, ParseError> {
    match f.get("kind")? {
        "coord" => Ok(RecordKind::Coordinator {
            instance: f.parse_as("i")?,
            crnd: f.opt_as("crnd")?,
            cval: f.opt_as("cval")?,
        }),
        "acc" => Ok(RecordKind::Acceptor {
            instance: f.parse_as("i")?,
            rnd: f.opt_as("rnd")?,
            vrnd: f.opt_as("vrnd")?,
            vval: f.opt_as("vval")?,
            sn: f.parse_as("sn")?,
        }),
        "elect" => Ok(RecordKind::Election {
            leader: f.parse_as("leader")?,
            highest_instance: f.opt_as("I")?,
            lsn: f.opt_as("lsn")?,
        }),
        other => Err(ParseError::UnknownRecord(other.to_string())),
    }
}

impl FromStr for TraceRecord {
    type Err = ParseError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let f = Fields::parse(line)?;
        let tick = f.parse_as("t")?;
        let event = match f.get("ev")? {
            "send" => Event::Send {
                mid: f.parse_as("mid")?,
                cause: f.opt_as("cause")?,
                msg: MessageSummary {
                    kind: f.parse_as("kind")?,
                    sender: f.parse_as("sender")?,
                    transport: f.parse_as("transport")?,
                    instance: f.opt_as("instance")?,
                    round: f.opt_as("round")?,
                    sn: f.opt_as("sn")?,
                    value: f.opt_as("value")?,
                    psize: f.parse_as("psize")?,
                    vrnd: f.opt_as("vrnd")?,
                },
                bytes: f.parse_as("bytes")?,
            },
            "recv" => Event::Recv {
                mid: f.parse_as("mid")?,
                to: f.parse_as("to")?,
                kind: f.parse_as("kind")?,
                bytes: f.parse_as("bytes")?,
            },
            "drop" => Event::Drop {
                mid: f.parse_as("mid")?,
                to: f.parse_as("to")?,
                reason: f.parse_as("reason")?,
            },
            "persist" => Event::Persist {
                node: f.parse_as("node")?,
                record: parse_record_kind(&f)?,
            },
            "exec" => Event::Exec {
                node: f.parse_as("node")?,
                inc: f.parse_as("inc")?,
                instance: f.parse_as("i")?,
                value: f.parse_as("value")?,
                reqs: f.list_as("reqs")?,
            },
            "submit" => Event::Submit {
                client: f.parse_as("client")?,
                id: f.parse_as("id")?,
                psize: f.parse_as("psize")?,
            },
            "reply" => Event::Reply {
                client: f.parse_as("client")?,
                id: f.parse_as("id")?,
            },
            "crash" => Event::Crash {
                node: f.parse_as("node")?,
            },
            "restart" => Event::Restart {
                node: f.parse_as("node")?,
                inc: f.parse_as("inc")?,
            },
            "view" => Event::View {
                number: f.parse_as("number")?,
                leader: f.parse_as("leader")?,
                lsn: f.parse_as("lsn")?,
                highest: f.opt_as("I")?,
                ring: f.list_as("ring")?,
            },
            "lans" => {
                let pairs: Vec<String> = f.list_as("owners")?;
                let mut owners = Vec::new();
                for p in pairs {
                    let (l, n) = p
                        .split_once(':')
                        .ok_or_else(|| ParseError::field("lan owner", &p))?;
                    owners.push((
                        l.parse().map_err(|_| ParseError::field("lan", l))?,
                        n.parse()?,
                    ));
                }
                Event::Lans { owners }
            }
            "install" => Event::Install {
                node: f.parse_as("node")?,
                lsn: f.parse_as("lsn")?,
            },
            "leadership-lost" => Event::LeadershipLost {
                node: f.parse_as("node")?,
                round: f.parse_as("round")?,
            },
            "view-change-requested" => Event::ViewChangeRequested {
                node: f.parse_as("node")?,
                round: f.parse_as("round")?,
            },
            "distance" => Event::Distance {
                node: f.parse_as("node")?,
                d: f.parse_as("d")?,
            },
            "protocol-error" => Event::ProtocolError {
                node: f.parse_as("node")?,
                detail: f.get("detail")?.to_string(),
            },
            other => return Err(ParseError::UnknownRecord(other.to_string())),
        };
        Ok(TraceRecord { tick, event })
    }
}

/// Render a whole trace, one record per line.
pub fn render(records: &[TraceRecord]) -> String {
    let mut s = String::new();
    for r in records {
        use std::fmt::Write;
        writeln!(s, "{r}").expect("writing to a String");
    }
    s
}

/// Parse a whole trace; errors carry the 1-based line number.
pub fn parse(text: &str) -> Result<Vec<TraceRecord>, ParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.parse().map_err(|e: ParseError| e.at_line(i + 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<TraceRecord> {
        let r = Round::new(1, NodeId(1));
        let v = Value::Request(RequestId::new(0, 1));
        vec![
            TraceRecord {
                tick: 3,
                event: Event::Send {
                    mid: 7,
                    cause: Some(6),
                    msg: MessageSummary {
                        kind: MessageKind::Phase2a2b,
                        sender: NodeId(2),
                        transport: Transport::Unicast(NodeId(3)),
                        instance: Some(1),
                        round: Some(r),
                        sn: Some(1),
                        value: Some(v),
                        psize: 0,
                        vrnd: None,
                    },
                    bytes: 128,
                },
            },
            TraceRecord {
                tick: 4,
                event: Event::Persist {
                    node: NodeId(2),
                    record: RecordKind::Acceptor {
                        instance: 1,
                        rnd: Some(r),
                        vrnd: Some(r),
                        vval: Some(v),
                        sn: 1,
                    },
                },
            },
            TraceRecord {
                tick: 4,
                event: Event::Exec {
                    node: NodeId(4),
                    inc: 0,
                    instance: 1,
                    value: v,
                    reqs: vec![RequestId::new(0, 1)],
                },
            },
            TraceRecord {
                tick: 5,
                event: Event::View {
                    number: 1,
                    leader: NodeId(1),
                    lsn: r,
                    highest: None,
                    ring: vec![NodeId(1), NodeId(2), NodeId(3)],
                },
            },
            TraceRecord {
                tick: 5,
                event: Event::Lans {
                    owners: vec![(0, NodeId(1)), (1, NodeId(2))],
                },
            },
            TraceRecord {
                tick: 6,
                event: Event::ProtocolError {
                    node: NodeId(1),
                    detail: "instance 1: two values".into(),
                },
            },
        ]
    }

    #[test]
    fn records_round_trip_through_text() {
        let recs = samples();
        let text = render(&recs);
        assert_eq!(parse(&text).unwrap(), recs);
    }

    #[test]
    fn message_fields_keep_their_order() {
        let line = samples()[0].to_string();
        let keys: Vec<&str> = line
            .split(' ')
            .map(|kv| kv.split_once('=').unwrap().0)
            .collect();
        let pos = |k: &str| keys.iter().position(|x| *x == k).unwrap();
        let order = ["kind", "sender", "transport", "instance", "round", "sn", "value", "psize"];
        assert!(order.windows(2).all(|w| pos(w[0]) < pos(w[1])));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = format!("{}\nt=1 ev=bogus\n", samples()[0]);
        match parse(&text) {
            Err(ParseError::Line { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
