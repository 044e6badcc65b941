from sslscene.cli import entrypoint

entrypoint()
