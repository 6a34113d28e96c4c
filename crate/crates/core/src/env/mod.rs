//! Point-mass maze world, demonstration generator and task guides.

mod demos;
mod maze;
mod tasks;

pub use demos::{demo_between, generate_demos, smooth_waypoints, track_waypoints, DemoSpec, Region, STATE_CHANNELS};
pub use maze::{Cell, Dynamics, InverseAction, MazeEnv, State};
pub use tasks::*;

/// Built-in maps.
pub mod maps {
    pub const OPEN_ROOM: &str = include_str!("maps/open_room.txt");
    pub const U_MAZE: &str = include_str!("maps/u_maze.txt");
    pub const LARGE_MAZE: &str = include_str!("maps/large_maze.txt");

    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "open_room" => Some(OPEN_ROOM),
            "u_maze" => Some(U_MAZE),
            "large_maze" => Some(LARGE_MAZE),
            _ => None,
        }
    }
}
