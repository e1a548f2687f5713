# QND decoherence simulator
