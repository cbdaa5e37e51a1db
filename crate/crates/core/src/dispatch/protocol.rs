//! Line protocol spoken by the planning service.
//!
//! Client to server:
//!
//! ```text
//! POS <user_id> <x> <y>      position in meters
//! PLAN <user_id>             request a route from the last known position
//! BYE <user_id>              forget a user
//! SUB DMAP                   receive DMAP lines on every publish
//! ```
//!
//! Server to client:
//!
//! ```text
//! ROUTE <user_id> <version> <n> <x1> <y1> ... <xn> <yn>
//! ERR <user_id> <code> <message>
//! DMAP <version>
//! ```

use std::fmt::Write as _;

use crate::grid::GridCoord;
use crate::router::Route;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    Pos { user: u64, x: f64, y: f64 },
    Plan { user: u64 },
    Bye { user: u64 },
    SubDmap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    Parse = 400,
    UnknownUser = 404,
    Superseded = 409,
    OutOfBounds = 416,
    NoRoute = 422,
    Busy = 503,
}

impl ErrorCode {
    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(code: u16) -> Option<Self> {
        [
            ErrorCode::Parse,
            ErrorCode::UnknownUser,
            ErrorCode::Superseded,
            ErrorCode::OutOfBounds,
            ErrorCode::NoRoute,
            ErrorCode::Busy,
        ]
        .into_iter()
        .find(|c| c.code() == code)
    }

    /// Whether the client may simply send the request again.
    pub fn is_retriable(self) -> bool {
        matches!(self, ErrorCode::Busy | ErrorCode::Superseded)
    }
}

pub fn parse_command(line: &str) -> Option<Command> {
    let mut it = line.split_ascii_whitespace();
    let verb = it.next()?;
    let cmd = match verb {
        "POS" => {
            let user = it.next()?.parse().ok()?;
            let x: f64 = it.next()?.parse().ok()?;
            let y: f64 = it.next()?.parse().ok()?;
            if !(x.is_finite() && y.is_finite()) {
                return None;
            }
            Command::Pos { user, x, y }
        }
        "PLAN" => Command::Plan {
            user: it.next()?.parse().ok()?,
        },
        "BYE" => Command::Bye {
            user: it.next()?.parse().ok()?,
        },
        "SUB" => match it.next()? {
            "DMAP" => Command::SubDmap,
            _ => return None,
        },
        _ => return None,
    };
    it.next().is_none().then_some(cmd)
}

pub fn format_route(user: u64, version: u64, route: &Route) -> String {
    let mut out = format!("ROUTE {user} {version} {}", route.cells.len());
    for c in &route.cells {
        let _ = write!(out, " {} {}", c.x, c.y);
    }
    out
}

pub fn format_error(user: u64, code: ErrorCode, message: &str) -> String {
    format!("ERR {user} {} {message}", code.code())
}

pub fn format_dmap(version: u64) -> String {
    format!("DMAP {version}")
}

/// A server line as seen by a client.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Route {
        user: u64,
        version: u64,
        cells: Vec<GridCoord>,
    },
    Err {
        user: u64,
        code: u16,
        message: String,
    },
    Dmap {
        version: u64,
    },
}

pub fn parse_reply(line: &str) -> Option<Reply> {
    let mut it = line.split_ascii_whitespace();
    match it.next()? {
        "ROUTE" => {
            let user = it.next()?.parse().ok()?;
            let version = it.next()?.parse().ok()?;
            let n: usize = it.next()?.parse().ok()?;
            let nums: Vec<usize> = it.map(|t| t.parse().ok()).collect::<Option<_>>()?;
            if nums.len() != 2 * n {
                return None;
            }
            let cells = nums.chunks(2).map(|p| GridCoord::new(p[0], p[1])).collect();
            Some(Reply::Route {
                user,
                version,
                cells,
            })
        }
        "ERR" => {
            let user = it.next()?.parse().ok()?;
            let code = it.next()?.parse().ok()?;
            let message = it.collect::<Vec<_>>().join(" ");
            Some(Reply::Err {
                user,
                code,
                message,
            })
        }
        "DMAP" => Some(Reply::Dmap {
            version: it.next()?.parse().ok()?,
        }),
        _ => None,
    }
}
