"""moth-fed: a Mastodon-compatible ActivityPub federation server."""

__version__ = "0.1.0"
