use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::grid::GridCoord;

use super::PlanNode;

#[derive(Debug, Clone, Copy)]
struct HeapItem {
    f: f64,
    h: f64,
    pos: GridCoord,
    seq: u32,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    // BinaryHeap is a max-heap: the "greatest" item is the one with the
    // smallest f, then smallest h, then first in reading order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.pos.cmp(&self.pos))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    stamp: u32,
    open: Option<(PlanNode, u32)>,
    closed: Option<(f64, Option<GridCoord>)>,
}

const EMPTY: Slot = Slot {
    stamp: 0,
    open: None,
    closed: None,
};

/// Open and closed lists keyed by grid position.
///
/// The open list is a binary heap ordered by `f` plus a per-position table
/// holding the live entry; superseded heap items are skipped on pop. Slots
/// are stamped per search so the storage can be reused without clearing.
#[derive(Debug, Clone)]
pub struct FrontierLists {
    width: usize,
    height: usize,
    stamp: u32,
    seq: u32,
    slots: Vec<Slot>,
    heap: BinaryHeap<HeapItem>,
}

impl FrontierLists {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            stamp: 1,
            seq: 0,
            slots: vec![EMPTY; width * height],
            heap: BinaryHeap::new(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Empties both lists, keeping allocations.
    pub fn reset(&mut self) {
        self.heap.clear();
        self.seq = 0;
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.slots.fill(EMPTY);
            self.stamp = 1;
        }
    }

    #[inline]
    fn slot(&self, pos: GridCoord) -> Option<&Slot> {
        let s = &self.slots[pos.y * self.width + pos.x];
        (s.stamp == self.stamp).then_some(s)
    }

    #[inline]
    fn slot_mut(&mut self, pos: GridCoord) -> &mut Slot {
        let stamp = self.stamp;
        let s = &mut self.slots[pos.y * self.width + pos.x];
        if s.stamp != stamp {
            *s = Slot {
                stamp,
                open: None,
                closed: None,
            };
        }
        s
    }

    /// Live open entry at a position.
    pub fn open_entry(&self, pos: GridCoord) -> Option<&PlanNode> {
        self.slot(pos).and_then(|s| s.open.as_ref().map(|(n, _)| n))
    }

    /// Cost at which a position was last closed.
    pub fn closed_cost(&self, pos: GridCoord) -> Option<f64> {
        self.slot(pos).and_then(|s| s.closed.map(|(g, _)| g))
    }

    /// Parent recorded when a position was last closed. Outer `None` means not closed.
    pub fn closed_parent(&self, pos: GridCoord) -> Option<Option<GridCoord>> {
        self.slot(pos).and_then(|s| s.closed.map(|(_, p)| p))
    }

    pub fn open_len(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.stamp == self.stamp && s.open.is_some())
            .count()
    }

    /// Inserts `node`, superseding any open entry at the same position.
    pub fn insert(&mut self, node: PlanNode) {
        self.seq = self.seq.wrapping_add(1);
        let seq = self.seq;
        self.slot_mut(node.pos).open = Some((node, seq));
        self.heap.push(HeapItem {
            f: node.f,
            h: node.h,
            pos: node.pos,
            seq,
        });
    }

    /// Removes and returns a minimum-f open node.
    pub fn pop(&mut self) -> Option<PlanNode> {
        while let Some(item) = self.heap.pop() {
            let stamp = self.stamp;
            let slot = &mut self.slots[item.pos.y * self.width + item.pos.x];
            if slot.stamp != stamp {
                continue;
            }
            match slot.open {
                Some((node, seq)) if seq == item.seq => {
                    slot.open = None;
                    return Some(node);
                }
                _ => continue,
            }
        }
        None
    }

    pub fn close(&mut self, node: &PlanNode) {
        self.slot_mut(node.pos).closed = Some((node.g, node.parent));
    }
}
