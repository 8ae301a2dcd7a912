from .app import serve

if __name__ == "__main__":
    serve()
