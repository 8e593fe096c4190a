"""Progressive neural video transmission with latent-space frame prediction.

Modules: frame_io (frames and datasets), nn (small MLPs), progressive
(taildrop autoencoder), predictor (latent prediction), baseline (monolithic
DCT codec and quality ladder), channel (token-bucket link), transport (wire
format and deadline-driven senders), loopback (real-socket mode), metrics
(MSE, reports and the experiment runner), cli.
"""

__version__ = "0.1.0"
