//! Prefix tree over the tokenized name set.
//!
//! Every name is inserted as its token ids followed by the end-of-name
//! sentinel; the node reached through the sentinel edge is marked terminal.
//! After construction the tree is frozen into flat arrays: node `i` owns the
//! edge range `offsets[i]..offsets[i + 1]`, sorted by token id.

use std::io::{Read, Write};

use crate::kb::NameIndex;
use crate::tokenize::{TokenId, Tokenizer, TokenizerKind, Vocab, END_OF_NAME};
use crate::{Error, Result};

pub type NodeId = u32;

pub const ROOT: NodeId = 0;

const MAGIC: &[u8; 4] = b"GTRI";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub token: TokenId,
    pub child: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenTrie {
    tokenizer: Tokenizer,
    vocab: Vocab,
    offsets: Vec<u32>,
    edges: Vec<Edge>,
    terminal: Vec<bool>,
    name_count: usize,
    max_name_tokens: usize,
}

/// Position in a trie. `depth` counts consumed tokens, sentinel included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrieCursor {
    pub node: NodeId,
    pub depth: u32,
}

impl TrieCursor {
    pub const ROOT: TrieCursor = TrieCursor {
        node: ROOT,
        depth: 0,
    };
}

#[derive(Default)]
struct Builder {
    children: Vec<Vec<Edge>>,
    terminal: Vec<bool>,
}

impl Builder {
    fn new() -> Self {
        Self {
            children: vec![Vec::new()],
            terminal: vec![false],
        }
    }

    fn insert(&mut self, ids: impl Iterator<Item = TokenId>) {
        let mut node = ROOT as usize;
        for token in ids {
            let kids = &self.children[node];
            node = match kids.binary_search_by_key(&token, |e| e.token) {
                Ok(pos) => kids[pos].child as usize,
                Err(pos) => {
                    let child = self.children.len() as NodeId;
                    self.children[node].insert(pos, Edge { token, child });
                    self.children.push(Vec::new());
                    self.terminal.push(false);
                    child as usize
                }
            };
        }
        self.terminal[node] = true;
    }

    fn freeze(
        self,
        tokenizer: Tokenizer,
        vocab: Vocab,
        name_count: usize,
        max_name_tokens: usize,
    ) -> TokenTrie {
        let mut offsets = Vec::with_capacity(self.children.len() + 1);
        let mut edges = Vec::with_capacity(self.children.len().saturating_sub(1));
        offsets.push(0);
        for kids in self.children {
            edges.extend(kids);
            offsets.push(edges.len() as u32);
        }
        TokenTrie {
            tokenizer,
            vocab,
            offsets,
            edges,
            terminal: self.terminal,
            name_count,
            max_name_tokens,
        }
    }
}

impl TokenTrie {
    /// Build over every name of the index.
    pub fn build(index: &NameIndex, tokenizer: Tokenizer) -> Self {
        Self::from_names(index.names(), tokenizer)
    }

    /// Build over arbitrary names; duplicates are inserted once.
    pub fn from_names<'a>(
        names: impl IntoIterator<Item = &'a str> + Clone,
        tokenizer: Tokenizer,
    ) -> Self {
        let vocab = Vocab::build(&tokenizer, names.clone());
        let mut builder = Builder::new();
        let mut seen = std::collections::HashSet::new();
        let mut max_len = 0;
        for name in names {
            if !seen.insert(name) {
                continue;
            }
            let toks = tokenizer.tokenize(name);
            max_len = max_len.max(toks.len());
            let ids = toks
                .into_iter()
                .map(|t| vocab.id(t).expect("vocabulary built from the same names"))
                .chain(std::iter::once(END_OF_NAME));
            builder.insert(ids);
        }
        builder.freeze(tokenizer, vocab, seen.len(), max_len)
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn name_count(&self) -> usize {
        self.name_count
    }

    /// Nodes other than the root.
    pub fn node_count(&self) -> usize {
        self.terminal.len() - 1
    }

    /// Token count of the longest name, sentinel excluded.
    pub fn max_name_tokens(&self) -> usize {
        self.max_name_tokens
    }

    pub fn is_terminal(&self, node: NodeId) -> bool {
        self.terminal[node as usize]
    }

    /// Outgoing edges of `node`, sorted by token id.
    pub fn children(&self, node: NodeId) -> &[Edge] {
        let lo = self.offsets[node as usize] as usize;
        let hi = self.offsets[node as usize + 1] as usize;
        &self.edges[lo..hi]
    }

    pub fn step(&self, cursor: TrieCursor, token: TokenId) -> Option<TrieCursor> {
        let kids = self.children(cursor.node);
        kids.binary_search_by_key(&token, |e| e.token)
            .ok()
            .map(|pos| TrieCursor {
                node: kids[pos].child,
                depth: cursor.depth + 1,
            })
    }

    pub fn walk(&self, prefix: &[TokenId]) -> Option<TrieCursor> {
        prefix
            .iter()
            .try_fold(TrieCursor::ROOT, |cur, &tok| self.step(cur, tok))
    }

    /// Tokens that may follow `prefix`; empty if `prefix` is not a path.
    /// Contains [`END_OF_NAME`] exactly when `prefix` spells a whole name.
    pub fn allowed_next(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        match self.walk(prefix) {
            Some(cur) => self.children(cur.node).iter().map(|e| e.token).collect(),
            None => Vec::new(),
        }
    }

    /// String form of [`TokenTrie::allowed_next`]. `None` when some prefix
    /// token is outside the vocabulary.
    pub fn allowed_next_str(&self, prefix: &[&str]) -> Option<Vec<&str>> {
        let ids: Option<Vec<TokenId>> = prefix
            .iter()
            .map(|t| {
                if *t == crate::tokenize::Special::EndOfName.as_str() {
                    Some(END_OF_NAME)
                } else {
                    self.vocab.id(t)
                }
            })
            .collect();
        let ids = ids?;
        Some(
            self.allowed_next(&ids)
                .into_iter()
                .map(|id| self.vocab.token(id))
                .collect(),
        )
    }

    /// True if `name` was inserted.
    pub fn contains(&self, name: &str) -> bool {
        let Some(ids) = self.vocab.encode(&self.tokenizer, name) else {
            return false;
        };
        self.walk(&ids)
            .and_then(|c| self.step(c, END_OF_NAME))
            .is_some_and(|c| self.is_terminal(c.node))
    }

    /// Every root-to-terminal path as token ids (sentinel excluded), in
    /// depth-first token order.
    pub fn paths(&self) -> Vec<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut stack: Vec<(NodeId, Vec<TokenId>)> = vec![(ROOT, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if self.is_terminal(node) {
                let mut p = path.clone();
                p.pop();
                out.push(p);
            }
            for e in self.children(node).iter().rev() {
                let mut next = path.clone();
                next.push(e.token);
                stack.push((e.child, next));
            }
        }
        out
    }

    /// Every stored name, detokenized.
    pub fn names(&self) -> Vec<String> {
        self.paths()
            .iter()
            .map(|p| self.vocab.decode(&self.tokenizer, p))
            .collect()
    }

    /// Binary cache: `GTRI`, version, tokenizer kind, name count, node count
    /// (root included), then per node the terminal flag, child count and
    /// `(token id, child index)` pairs. All integers little-endian. The
    /// vocabulary is stored separately as JSON.
    pub fn write_binary(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.tokenizer.kind.code()])?;
        w.write_all(&(self.name_count as u64).to_le_bytes())?;
        w.write_all(&(self.terminal.len() as u64).to_le_bytes())?;
        for node in 0..self.terminal.len() {
            let kids = self.children(node as NodeId);
            w.write_all(&[u8::from(self.terminal[node])])?;
            w.write_all(&(kids.len() as u32).to_le_bytes())?;
            for e in kids {
                w.write_all(&e.token.to_le_bytes())?;
                w.write_all(&e.child.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read, vocab: Vocab) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("trie cache: {m}"));
        let io = |e: std::io::Error| Error::Format(format!("trie cache: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        if read_u32(&mut r).map_err(io)? != VERSION {
            return Err(bad("unsupported version"));
        }
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind).map_err(io)?;
        let kind =
            TokenizerKind::from_code(kind[0]).ok_or_else(|| bad("unknown tokenizer kind"))?;
        let name_count = read_u64(&mut r).map_err(io)? as usize;
        let nodes = read_u64(&mut r).map_err(io)? as usize;
        if nodes == 0 {
            return Err(bad("no root node"));
        }
        let mut offsets = Vec::with_capacity(nodes + 1);
        let mut terminal = Vec::with_capacity(nodes);
        let mut edges = Vec::new();
        offsets.push(0);
        for _ in 0..nodes {
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag).map_err(io)?;
            terminal.push(flag[0] != 0);
            let count = read_u32(&mut r).map_err(io)?;
            let mut prev = None;
            for _ in 0..count {
                let token = read_u32(&mut r).map_err(io)?;
                let child = read_u32(&mut r).map_err(io)?;
                if (token as usize) >= vocab.len() || child as usize >= nodes || child == ROOT {
                    return Err(bad("edge out of range"));
                }
                if prev.is_some_and(|p| p >= token) {
                    return Err(bad("children not sorted"));
                }
                prev = Some(token);
                edges.push(Edge { token, child });
            }
            offsets.push(edges.len() as u32);
        }
        let mut trie = TokenTrie {
            tokenizer: Tokenizer::new(kind),
            vocab,
            offsets,
            edges,
            terminal,
            name_count,
            max_name_tokens: 0,
        };
        trie.max_name_tokens = trie.compute_max_depth().saturating_sub(1);
        Ok(trie)
    }

    fn compute_max_depth(&self) -> usize {
        let mut depth = vec![0usize; self.terminal.len()];
        let mut best = 0;
        // children always have larger ids than their parent when built here,
        // but a cache may not; use an explicit stack.
        let mut stack = vec![ROOT];
        let mut visited = vec![false; self.terminal.len()];
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut visited[n as usize], true) {
                continue;
            }
            for e in self.children(n) {
                depth[e.child as usize] = depth[n as usize] + 1;
                best = best.max(depth[e.child as usize]);
                stack.push(e.child);
            }
        }
        best
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
