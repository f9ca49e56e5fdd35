use serde::{Deserialize, Serialize};

use crate::gateway::ApiKind;

/// Services that are always on the secure-mode menu, in display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltIn {
    RepositoryBrowser,
    SensorControl,
    SignedArchive,
    PeerAdmin,
    Exit,
}

impl BuiltIn {
    pub const ALL: [BuiltIn; 5] = [
        BuiltIn::RepositoryBrowser,
        BuiltIn::SensorControl,
        BuiltIn::SignedArchive,
        BuiltIn::PeerAdmin,
        BuiltIn::Exit,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MenuEntry {
    pub request_id: u64,
    pub kind: ApiKind,
    pub app: String,
    pub peer: Option<String>,
    pub peer_groups: Vec<String>,
    pub detail: String,
}

/// Data only; rendering belongs to the UI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MenuModel {
    pub built_ins: Vec<BuiltIn>,
    pub pending: Vec<MenuEntry>,
}

/// Screen geometry used to hit-test taps on the menu: one row per item,
/// built-ins first.
pub const SCREEN_WIDTH: u32 = 480;
pub const SCREEN_HEIGHT: u32 = 800;
pub const ROW_HEIGHT: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MenuHit {
    BuiltIn(BuiltIn),
    Request(u64),
}

impl MenuModel {
    pub fn hit(&self, x: u32, y: u32) -> Option<MenuHit> {
        if x >= SCREEN_WIDTH || y >= SCREEN_HEIGHT {
            return None;
        }
        let row = (y / ROW_HEIGHT) as usize;
        if let Some(b) = self.built_ins.get(row) {
            return Some(MenuHit::BuiltIn(*b));
        }
        self.pending
            .get(row - self.built_ins.len())
            .map(|e| MenuHit::Request(e.request_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_testing_by_row() {
        let menu = MenuModel {
            built_ins: BuiltIn::ALL.to_vec(),
            pending: vec![MenuEntry {
                request_id: 9,
                kind: ApiKind::RequestData,
                app: "messaging".into(),
                peer: Some("bob".into()),
                peer_groups: vec![],
                detail: String::new(),
            }],
        };
        assert_eq!(
            menu.hit(10, 0),
            Some(MenuHit::BuiltIn(BuiltIn::RepositoryBrowser))
        );
        assert_eq!(
            menu.hit(10, 4 * ROW_HEIGHT + 1),
            Some(MenuHit::BuiltIn(BuiltIn::Exit))
        );
        assert_eq!(menu.hit(10, 5 * ROW_HEIGHT), Some(MenuHit::Request(9)));
        assert_eq!(menu.hit(10, 6 * ROW_HEIGHT), None);
        assert_eq!(menu.hit(SCREEN_WIDTH, 0), None);
    }
}
