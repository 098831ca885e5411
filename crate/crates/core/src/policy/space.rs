use alloc::vec::Vec;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Reserved end-of-sequence token.
pub const EOS: TokenId = 0;

/// Largest response space accepted for enumeration.
pub const MAX_SPACE: usize = 1 << 22;

pub const MAX_LEN: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    size: usize,
    max_len: usize,
}

impl Vocab {
    pub fn new(size: usize, max_len: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidVocab("size must be at least 2"));
        }
        if max_len < 1 {
            return Err(Error::InvalidVocab("max_len must be at least 1"));
        }
        if max_len > MAX_LEN {
            return Err(Error::InvalidVocab("max_len too large to enumerate"));
        }
        let k = size - 1;
        let mut total: usize = 0;
        let mut pow: usize = 1;
        for _ in 0..=max_len {
            total = total.checked_add(pow).filter(|&t| t <= MAX_SPACE).ok_or(Error::InvalidVocab("response space too large to enumerate"))?;
            pow = pow.saturating_mul(k);
        }
        Ok(Self { size, max_len })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn contains(&self, token: TokenId) -> bool {
        (token as usize) < self.size
    }

    pub fn space(&self) -> ResponseSpace {
        ResponseSpace::new(*self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prompt {
    pub id: usize,
    pub tokens: Vec<TokenId>,
}

impl Prompt {
    pub fn new(id: usize) -> Self {
        Self { id, tokens: Vec::new() }
    }

    pub fn with_tokens(id: usize, tokens: Vec<TokenId>) -> Self {
        Self { id, tokens }
    }

    pub fn check(&self, vocab: &Vocab) -> Result<()> {
        if self.tokens.iter().all(|&t| vocab.contains(t)) {
            Ok(())
        } else {
            Err(Error::InvalidRecord("prompt token out of vocabulary range"))
        }
    }
}

/// Token sequence ending in exactly one [`EOS`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Response(Vec<TokenId>);

impl Response {
    pub fn new(tokens: Vec<TokenId>) -> Result<Self> {
        match tokens.split_last() {
            None => Err(Error::MalformedResponse("empty token sequence")),
            Some((&last, _)) if last != EOS => Err(Error::MalformedResponse("missing terminator")),
            Some((_, body)) if body.contains(&EOS) => Err(Error::MalformedResponse("interior terminator")),
            Some(_) => Ok(Self(tokens)),
        }
    }

    /// Builds a response from content tokens, appending the terminator.
    pub fn from_content(content: &[TokenId]) -> Result<Self> {
        let mut tokens = Vec::with_capacity(content.len() + 1);
        tokens.extend_from_slice(content);
        tokens.push(EOS);
        Self::new(tokens)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn content(&self) -> &[TokenId] {
        &self.0[..self.0.len() - 1]
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.content().contains(&token)
    }

    pub fn check(&self, vocab: &Vocab) -> Result<()> {
        if self.0.len() > vocab.max_len() + 1 {
            return Err(Error::MalformedResponse("response longer than max_len"));
        }
        if !self.0.iter().all(|&t| vocab.contains(t)) {
            return Err(Error::MalformedResponse("token out of vocabulary range"));
        }
        Ok(())
    }
}

/// Enumeration of every valid response for a vocabulary, ordered by content
/// length and then lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseSpace {
    vocab: Vocab,
    // offsets[len] = number of responses with fewer than `len` content tokens
    offsets: [usize; MAX_LEN + 2],
}

impl ResponseSpace {
    pub fn new(vocab: Vocab) -> Self {
        let k = vocab.size() - 1;
        let mut offsets = [0usize; MAX_LEN + 2];
        let mut pow = 1usize;
        for len in 0..=vocab.max_len() {
            offsets[len + 1] = offsets[len] + pow;
            pow = pow.saturating_mul(k);
        }
        Self { vocab, offsets }
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.offsets[self.vocab.max_len() + 1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub(crate) fn offset(&self, content_len: usize) -> usize {
        self.offsets[content_len]
    }

    /// Base for the per-length content numbering.
    pub(crate) fn radix(&self) -> usize {
        self.vocab.size() - 1
    }

    pub fn index_of(&self, y: &Response) -> Result<usize> {
        y.check(&self.vocab)?;
        let content = y.content();
        let k = self.radix();
        let num = content.iter().fold(0usize, |acc, &t| acc * k + (t as usize - 1));
        Ok(self.offsets[content.len()] + num)
    }

    pub fn response(&self, index: usize) -> Response {
        assert!(index < self.len(), "response index out of range");
        let mut len = 0;
        while self.offsets[len + 1] <= index {
            len += 1;
        }
        let k = self.radix();
        let mut num = index - self.offsets[len];
        let mut tokens = alloc::vec![EOS; len + 1];
        for slot in (0..len).rev() {
            tokens[slot] = (num % k) as TokenId + 1;
            num /= k;
        }
        Response(tokens)
    }

    pub fn iter(&self) -> impl Iterator<Item = Response> + '_ {
        (0..self.len()).map(move |i| self.response(i))
    }
}
