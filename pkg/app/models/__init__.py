"""Neural core, speaker encoder, emotion converter and verification scoring."""
